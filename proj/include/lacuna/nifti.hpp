#ifndef LACUNA_NIFTI_HPP
#define LACUNA_NIFTI_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lacuna/volume.hpp"

namespace lacuna {

/// Parses an uncompressed single-file NIfTI-1 image (header + payload).
/// Supported datatypes: uint8 (2), int16 (4), float32 (16). Values are
/// scaled as stored*scl_slope + scl_inter when scl_slope != 0. Endianness
/// is detected from sizeof_hdr.
Volume3D parse_nifti1(const std::vector<uint8_t>& bytes);

/// Serializes a Volume3D as little-endian float32 NIfTI-1, vox_offset 352,
/// magic "n+1". srow rows reproduce vol.affine exactly.
std::vector<uint8_t> write_nifti1(const Volume3D& vol);

Volume3D read_nifti_file(const std::string& path);
void write_nifti_file(const Volume3D& vol, const std::string& path);

/// Permutes/flips an axis-aligned volume so the affine 3x3 block becomes a
/// positive diagonal (RAS). World coordinates of every value are preserved.
/// Throws ObliqueAffine if the affine is not a signed permutation*diagonal.
Volume3D reorient_to_ras(const Volume3D& vol);

/// Resamples an RAS volume to a target spacing by trilinear interpolation.
/// Samples outside the source extent are 0.
Volume3D resample_trilinear(const Volume3D& vol, const std::array<double, 3>& target_spacing);

/// Nearest-neighbor variant for label volumes.
Volume3D resample_nearest(const Volume3D& vol, const std::array<double, 3>& target_spacing);

}  // namespace lacuna

#endif
