#include "lacuna/volume.hpp"

#include <cmath>

namespace lacuna {

bool Volume3D::same_grid(const Volume3D& o, double tol) const {
  if (dims != o.dims) return false;
  for (int i = 0; i < 3; ++i)
    if (std::abs(spacing[i] - o.spacing[i]) > tol) return false;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (std::abs(affine[i][j] - o.affine[i][j]) > tol) return false;
  return true;
}

void Volume3D::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw Error(ErrorCode::ConfigError, "non-positive volume dims");
  if (data.size() != size())
    throw Error(ErrorCode::ConfigError, "data length does not match dims");
  for (int i = 0; i < 3; ++i)
    if (!(spacing[i] > 0.0))
      throw Error(ErrorCode::NonPositivePixdim, "spacing must be > 0");
  const double last[4] = {0, 0, 0, 1};
  for (int j = 0; j < 4; ++j)
    if (affine[3][j] != last[j])
      throw Error(ErrorCode::ConfigError, "affine last row must be (0,0,0,1)");
  for (int j = 0; j < 3; ++j) {
    double n = 0;
    for (int i = 0; i < 3; ++i) n += affine[i][j] * affine[i][j];
    n = std::sqrt(n);
    if (std::abs(n - spacing[j]) > 1e-4 * std::max(1.0, spacing[j]))
      throw Error(ErrorCode::ConfigError, "affine column norm does not match spacing");
  }
}

void require_same_grid(const Volume3D& a, const Volume3D& b, double tol) {
  if (!a.same_grid(b, tol))
    throw Error(ErrorCode::GridMismatch, "volumes do not share a grid");
}

}  // namespace lacuna
