#include "lacuna/nifti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lacuna {

namespace {

// Field offsets in the 348-byte NIfTI-1 header.
constexpr size_t kOffSizeofHdr = 0;
constexpr size_t kOffDim = 40;        // int16[8]
constexpr size_t kOffDatatype = 70;   // int16
constexpr size_t kOffBitpix = 72;     // int16
constexpr size_t kOffPixdim = 76;     // float[8]
constexpr size_t kOffVoxOffset = 108; // float
constexpr size_t kOffSclSlope = 112;  // float
constexpr size_t kOffSclInter = 116;  // float
constexpr size_t kOffSformCode = 254; // int16
constexpr size_t kOffSrowX = 280;     // float[4]
constexpr size_t kOffSrowY = 296;
constexpr size_t kOffSrowZ = 312;
constexpr size_t kOffMagic = 344;     // char[4]
constexpr size_t kHeaderSize = 348;

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtFloat32 = 16;

template <typename T>
T read_le(const uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::vector<uint8_t>& buf, size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

}  // namespace

Volume3D parse_nifti1(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize)
    throw Error(ErrorCode::TruncatedPayload, "fewer than 348 bytes");

  bool swap = false;
  int32_t hdr_size = read_le<int32_t>(bytes.data() + kOffSizeofHdr, false);
  if (hdr_size != 348) {
    swap = true;
    hdr_size = read_le<int32_t>(bytes.data() + kOffSizeofHdr, true);
    if (hdr_size != 348)
      throw Error(ErrorCode::BadMagic, "sizeof_hdr is not 348 in either byte order");
  }

  char magic[4];
  std::memcpy(magic, bytes.data() + kOffMagic, 4);
  const bool n1 = std::memcmp(magic, "n+1\0", 4) == 0;
  const bool ni1 = std::memcmp(magic, "ni1\0", 4) == 0;
  if (!n1 && !ni1) throw Error(ErrorCode::BadMagic, "magic is neither n+1 nor ni1");

  int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = read_le<int16_t>(bytes.data() + kOffDim + 2 * i, swap);
  if (dim[0] != 3 && dim[0] != 4)
    throw Error(ErrorCode::UnsupportedDatatype, "dim[0] must be 3 or 4");
  if (dim[0] == 4 && dim[4] != 1)
    throw Error(ErrorCode::UnsupportedDatatype, "4D images must have a single volume (dim[4]=1)");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) throw Error(ErrorCode::UnsupportedDatatype, "used dims must be >= 1");

  int16_t datatype = read_le<int16_t>(bytes.data() + kOffDatatype, swap);
  size_t elem_size;
  switch (datatype) {
    case kDtUint8: elem_size = 1; break;
    case kDtInt16: elem_size = 2; break;
    case kDtFloat32: elem_size = 4; break;
    default:
      throw Error(ErrorCode::UnsupportedDatatype,
                  "datatype code " + std::to_string(datatype));
  }

  Volume3D vol;
  vol.dims = {dim[1], dim[2], dim[3]};
  for (int i = 0; i < 3; ++i) {
    float p = read_le<float>(bytes.data() + kOffPixdim + 4 * (i + 1), swap);
    if (!(p > 0.0f)) throw Error(ErrorCode::NonPositivePixdim, "pixdim[" + std::to_string(i + 1) + "]");
    vol.spacing[i] = p;
  }

  const size_t srow_off[3] = {kOffSrowX, kOffSrowY, kOffSrowZ};
  vol.affine = Volume3D::identity_affine();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      vol.affine[r][c] = read_le<float>(bytes.data() + srow_off[r] + 4 * c, swap);

  float vox_offset = read_le<float>(bytes.data() + kOffVoxOffset, swap);
  size_t offset = static_cast<size_t>(vox_offset);
  if (offset < kHeaderSize) offset = kHeaderSize;

  float slope = read_le<float>(bytes.data() + kOffSclSlope, swap);
  float inter = read_le<float>(bytes.data() + kOffSclInter, swap);

  size_t n = vol.size();
  if (bytes.size() < offset + n * elem_size)
    throw Error(ErrorCode::TruncatedPayload, "payload shorter than dims * element size");

  vol.data.resize(n);
  const uint8_t* p = bytes.data() + offset;
  for (size_t i = 0; i < n; ++i) {
    float v;
    switch (datatype) {
      case kDtUint8: v = static_cast<float>(p[i]); break;
      case kDtInt16: v = static_cast<float>(read_le<int16_t>(p + 2 * i, swap)); break;
      default: v = read_le<float>(p + 4 * i, swap); break;
    }
    if (slope != 0.0f) v = v * slope + inter;
    vol.data[i] = v;
  }
  return vol;
}

std::vector<uint8_t> write_nifti1(const Volume3D& vol) {
  vol.validate();
  const size_t n = vol.size();
  std::vector<uint8_t> buf(352 + n * 4, 0);

  put<int32_t>(buf, kOffSizeofHdr, 348);
  int16_t dim[8] = {3, static_cast<int16_t>(vol.dims[0]), static_cast<int16_t>(vol.dims[1]),
                    static_cast<int16_t>(vol.dims[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<int16_t>(buf, kOffDim + 2 * i, dim[i]);
  put<int16_t>(buf, kOffDatatype, kDtFloat32);
  put<int16_t>(buf, kOffBitpix, 32);
  put<float>(buf, kOffPixdim, 1.0f);
  for (int i = 0; i < 3; ++i) put<float>(buf, kOffPixdim + 4 * (i + 1), static_cast<float>(vol.spacing[i]));
  put<float>(buf, kOffVoxOffset, 352.0f);
  put<float>(buf, kOffSclSlope, 1.0f);
  put<float>(buf, kOffSclInter, 0.0f);
  put<int16_t>(buf, kOffSformCode, 1);
  const size_t srow_off[3] = {kOffSrowX, kOffSrowY, kOffSrowZ};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      put<float>(buf, srow_off[r] + 4 * c, static_cast<float>(vol.affine[r][c]));
  std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);

  std::memcpy(buf.data() + 352, vol.data.data(), n * 4);
  return buf;
}

Volume3D read_nifti_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_nifti1(bytes);
}

void write_nifti_file(const Volume3D& vol, const std::string& path) {
  auto bytes = write_nifti1(vol);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

Volume3D reorient_to_ras(const Volume3D& vol) {
  vol.validate();
  // Decompose the 3x3 block as signed permutation * diagonal.
  int world_axis[3];   // voxel axis j maps to world axis world_axis[j]
  double sign[3];
  for (int j = 0; j < 3; ++j) {
    int best = -1;
    double best_abs = 0;
    for (int i = 0; i < 3; ++i) {
      double a = std::abs(vol.affine[i][j]);
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    // off-diagonal terms must be negligible relative to spacing
    for (int i = 0; i < 3; ++i) {
      if (i == best && best_abs < 1e-12)
        throw Error(ErrorCode::ObliqueAffine, "degenerate affine column");
      if (i != best && std::abs(vol.affine[i][j]) > 1e-3 * vol.spacing[j])
        throw Error(ErrorCode::ObliqueAffine, "affine is not axis-aligned");
    }
    world_axis[j] = best;
    sign[j] = vol.affine[best][j] >= 0 ? 1.0 : -1.0;
  }
  if (world_axis[0] == world_axis[1] || world_axis[1] == world_axis[2] || world_axis[0] == world_axis[2])
    throw Error(ErrorCode::ObliqueAffine, "affine columns do not form a permutation");

  // src_axis[w] = voxel axis of the source that runs along world axis w.
  int src_axis[3];
  for (int j = 0; j < 3; ++j) src_axis[world_axis[j]] = j;

  Volume3D out;
  for (int w = 0; w < 3; ++w) {
    out.dims[w] = vol.dims[src_axis[w]];
    out.spacing[w] = vol.spacing[src_axis[w]];
  }
  out.data.resize(vol.size());
  out.affine = Volume3D::identity_affine();
  for (int w = 0; w < 3; ++w) {
    int j = src_axis[w];
    out.affine[w][w] = std::abs(vol.affine[w][j]);
    // translation: world coordinate of the output voxel (0,0,0), which is the
    // source voxel at index 0 (positive direction) or dims-1 (flipped).
    double idx0 = sign[j] > 0 ? 0.0 : static_cast<double>(vol.dims[j] - 1);
    out.affine[w][3] = vol.affine[w][j] * idx0 + vol.affine[w][3];
  }

  for (int z = 0; z < vol.dims[2]; ++z)
    for (int y = 0; y < vol.dims[1]; ++y)
      for (int x = 0; x < vol.dims[0]; ++x) {
        int src[3] = {x, y, z};
        int dst[3];
        for (int j = 0; j < 3; ++j) {
          int w = world_axis[j];
          dst[w] = sign[j] > 0 ? src[j] : vol.dims[j] - 1 - src[j];
        }
        out.at(dst[0], dst[1], dst[2]) = vol.at(x, y, z);
      }
  return out;
}

namespace {

Volume3D resample_impl(const Volume3D& vol, const std::array<double, 3>& target_spacing, bool nearest) {
  vol.validate();
  for (double s : target_spacing)
    if (!(s > 0)) throw Error(ErrorCode::NonPositivePixdim, "target spacing must be > 0");

  Volume3D out;
  for (int i = 0; i < 3; ++i) {
    double extent = vol.dims[i] * vol.spacing[i];
    out.dims[i] = std::max(1, static_cast<int>(std::ceil(extent / target_spacing[i])));
    out.spacing[i] = target_spacing[i];
  }
  out.affine = vol.affine;
  for (int i = 0; i < 3; ++i) {
    double scale = target_spacing[i] / vol.spacing[i];
    for (int r = 0; r < 3; ++r) out.affine[r][i] = vol.affine[r][i] * scale;
    // Grids share the corner of voxel (0,0,0); voxel centers shift by
    // (spacing_out - spacing_in)/2 along each source axis.
    for (int r = 0; r < 3; ++r) out.affine[r][3] += vol.affine[r][i] * 0.5 * (scale - 1.0);
  }
  out.data.assign(out.size(), 0.0f);

  // Output voxel centers in source voxel coordinates: the grids share the
  // corner of voxel (0,0,0), so src = (out_idx + 0.5)*ratio - 0.5 per axis.
  const double ratio[3] = {target_spacing[0] / vol.spacing[0], target_spacing[1] / vol.spacing[1],
                           target_spacing[2] / vol.spacing[2]};
  for (int z = 0; z < out.dims[2]; ++z) {
    double sz = (z + 0.5) * ratio[2] - 0.5;
    for (int y = 0; y < out.dims[1]; ++y) {
      double sy = (y + 0.5) * ratio[1] - 0.5;
      for (int x = 0; x < out.dims[0]; ++x) {
        double sx = (x + 0.5) * ratio[0] - 0.5;
        if (nearest) {
          int ix = static_cast<int>(std::lround(sx));
          int iy = static_cast<int>(std::lround(sy));
          int iz = static_cast<int>(std::lround(sz));
          if (vol.in_bounds(ix, iy, iz)) out.at(x, y, z) = vol.at(ix, iy, iz);
          continue;
        }
        double pos[3] = {sx, sy, sz};
        int lo[3];
        double fr[3];
        bool outside = false;
        for (int i = 0; i < 3; ++i) {
          if (vol.dims[i] == 1) {  // degenerate axis: nearest value
            lo[i] = 0;
            fr[i] = 0.0;
            if (pos[i] < -0.5 || pos[i] > 0.5) outside = true;
            continue;
          }
          if (pos[i] < -0.5 || pos[i] > vol.dims[i] - 0.5) {
            outside = true;
            break;
          }
          double c = std::min(std::max(pos[i], 0.0), static_cast<double>(vol.dims[i] - 1));
          lo[i] = std::min(static_cast<int>(std::floor(c)), vol.dims[i] - 2);
          fr[i] = c - lo[i];
        }
        if (outside) continue;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              double w = (dx ? fr[0] : 1 - fr[0]) * (dy ? fr[1] : 1 - fr[1]) * (dz ? fr[2] : 1 - fr[2]);
              if (w == 0.0) continue;
              acc += w * vol.at(std::min(lo[0] + dx, vol.dims[0] - 1),
                                std::min(lo[1] + dy, vol.dims[1] - 1),
                                std::min(lo[2] + dz, vol.dims[2] - 1));
            }
        out.at(x, y, z) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace

Volume3D resample_trilinear(const Volume3D& vol, const std::array<double, 3>& target_spacing) {
  return resample_impl(vol, target_spacing, false);
}

Volume3D resample_nearest(const Volume3D& vol, const std::array<double, 3>& target_spacing) {
  return resample_impl(vol, target_spacing, true);
}

}  // namespace lacuna
