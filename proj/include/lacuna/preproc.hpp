#ifndef LACUNA_PREPROC_HPP
#define LACUNA_PREPROC_HPP

#include <utility>

#include "lacuna/volume.hpp"

namespace lacuna {

/// Brain and CSF masks sharing the scan grid; csf is a subset of brain.
struct BrainMasks {
  Volume3D brain;
  Volume3D csf;
};

/// Multiplicative bias estimation: least-squares polynomial fit of
/// log-intensity over mask coordinates (centered, scaled to [-1,1] per axis).
/// Returns (corrected, field) with corrected = vol / field and the field's
/// geometric mean over the mask equal to 1.
std::pair<Volume3D, Volume3D> bias_field_correct(const Volume3D& vol, const Volume3D& mask,
                                                 int order);

/// Z-scores in-mask intensities (mean 0, sd 1); out-of-mask voxels become 0.
Volume3D normalize_scanwise(const Volume3D& vol, const Volume3D& mask);

/// Divides by the median intensity over the CSF mask. Even counts use the
/// mean of the middle two values.
Volume3D csf_normalize(const Volume3D& vol, const BrainMasks& masks);

/// csf_normalize(t1) - csf_normalize(flair), zeroed outside the brain mask.
Volume3D difference_map(const Volume3D& t1, const Volume3D& flair, const BrainMasks& masks);

}  // namespace lacuna

#endif
