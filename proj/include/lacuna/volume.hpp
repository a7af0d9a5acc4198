#ifndef LACUNA_VOLUME_HPP
#define LACUNA_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "lacuna/error.hpp"

namespace lacuna {

using Affine = std::array<std::array<double, 4>, 4>;

/// Scalar 3D grid with voxel spacing and a voxel-to-world affine (mm).
/// Storage is x-fastest: index = x + nx*(y + ny*z).
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Affine affine{};
  std::vector<float> data;

  Volume3D() { affine = identity_affine(); }
  Volume3D(int nx, int ny, int nz, float fill = 0.0f) : dims{nx, ny, nz} {
    affine = identity_affine();
    data.assign(static_cast<size_t>(nx) * ny * nz, fill);
  }

  static Affine identity_affine() {
    Affine a{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a[i][j] = (i == j) ? 1.0 : 0.0;
    return a;
  }

  size_t size() const { return static_cast<size_t>(dims[0]) * dims[1] * dims[2]; }
  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(x) + static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * z);
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
  }

  /// World coordinate (mm) of a voxel index (may be fractional).
  std::array<double, 3> world(double x, double y, double z) const {
    std::array<double, 3> w{};
    for (int i = 0; i < 3; ++i)
      w[i] = affine[i][0] * x + affine[i][1] * y + affine[i][2] * z + affine[i][3];
    return w;
  }

  /// Same grid (dims, spacing, affine) within tolerance.
  bool same_grid(const Volume3D& o, double tol = 1e-6) const;

  /// Checks the type invariants; throws on violation.
  void validate() const;
};

/// Throws GridMismatch unless a and b share dims/spacing/affine.
void require_same_grid(const Volume3D& a, const Volume3D& b, double tol = 1e-6);

/// Integer-labeled volume (atlas regions, component labels) stored as float codes.
using LabelVolume = Volume3D;

}  // namespace lacuna

#endif
