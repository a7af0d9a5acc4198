#include "lacuna/preproc.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace lacuna {

namespace {

// Monomial exponent triples with total degree <= order.
std::vector<std::array<int, 3>> monomials(int order) {
  std::vector<std::array<int, 3>> m;
  for (int i = 0; i <= order; ++i)
    for (int j = 0; j + i <= order; ++j)
      for (int k = 0; k + j + i <= order; ++k) m.push_back({i, j, k});
  return m;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::pair<Volume3D, Volume3D> bias_field_correct(const Volume3D& vol, const Volume3D& mask,
                                                 int order) {
  require_same_grid(vol, mask);
  if (order < 1 || order > 4)
    throw Error(ErrorCode::ConfigError, "bias order must be in [1,4]");

  std::vector<size_t> in_mask;
  for (size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i] != 0.0f) in_mask.push_back(i);
  if (in_mask.empty()) throw Error(ErrorCode::EmptyMask, "bias mask is empty");
  for (size_t i : in_mask)
    if (!(vol.data[i] > 0.0f))
      throw Error(ErrorCode::NonPositiveIntensity, "in-mask voxel <= 0");

  const auto exps = monomials(order);
  const int terms = static_cast<int>(exps.size());
  const int nx = vol.dims[0], ny = vol.dims[1];

  // Coordinates centered and scaled to [-1,1] per axis.
  auto coord = [&](int idx_axis, int v) {
    int n = vol.dims[idx_axis];
    if (n == 1) return 0.0;
    return 2.0 * v / (n - 1) - 1.0;
  };

  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(terms, terms);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(terms);
  Eigen::VectorXd row(terms);
  for (size_t i : in_mask) {
    size_t rem = i;
    int x = static_cast<int>(rem % nx);
    rem /= nx;
    int y = static_cast<int>(rem % ny);
    int z = static_cast<int>(rem / ny);
    double cx = coord(0, x), cy = coord(1, y), cz = coord(2, z);
    for (int t = 0; t < terms; ++t)
      row(t) = std::pow(cx, exps[t][0]) * std::pow(cy, exps[t][1]) * std::pow(cz, exps[t][2]);
    ata.noalias() += row * row.transpose();
    atb.noalias() += row * std::log(static_cast<double>(vol.data[i]));
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ata, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double smax = svd.singularValues()(0);
  double smin = svd.singularValues()(terms - 1);
  if (!(smin > 0.0) || smax / smin > 1e10)
    throw Error(ErrorCode::IllConditionedFit, "normal matrix condition estimate above 1e10");
  Eigen::VectorXd coef = svd.solve(atb);

  // Evaluate log-field everywhere, then center it over the mask so the
  // field's geometric mean there is exactly 1.
  std::vector<double> logf(vol.data.size());
  for (size_t i = 0; i < vol.data.size(); ++i) {
    size_t rem = i;
    int x = static_cast<int>(rem % nx);
    rem /= nx;
    int y = static_cast<int>(rem % ny);
    int z = static_cast<int>(rem / ny);
    double cx = coord(0, x), cy = coord(1, y), cz = coord(2, z);
    double p = 0.0;
    for (int t = 0; t < terms; ++t)
      p += coef(t) * std::pow(cx, exps[t][0]) * std::pow(cy, exps[t][1]) * std::pow(cz, exps[t][2]);
    logf[i] = p;
  }
  double mean_log = 0.0;
  for (size_t i : in_mask) mean_log += logf[i];
  mean_log /= static_cast<double>(in_mask.size());

  Volume3D field = vol;
  Volume3D corrected = vol;
  for (size_t i = 0; i < vol.data.size(); ++i) {
    double f = std::exp(logf[i] - mean_log);
    field.data[i] = static_cast<float>(f);
    corrected.data[i] = static_cast<float>(vol.data[i] / f);
  }
  return {corrected, field};
}

Volume3D normalize_scanwise(const Volume3D& vol, const Volume3D& mask) {
  require_same_grid(vol, mask);
  double sum = 0.0, sum2 = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < vol.data.size(); ++i) {
    if (mask.data[i] == 0.0f) continue;
    sum += vol.data[i];
    n++;
  }
  if (n < 2) throw Error(ErrorCode::EmptyMask, "mask has fewer than 2 voxels");
  double mean = sum / static_cast<double>(n);
  for (size_t i = 0; i < vol.data.size(); ++i) {
    if (mask.data[i] == 0.0f) continue;
    double d = vol.data[i] - mean;
    sum2 += d * d;
  }
  double sd = std::sqrt(sum2 / static_cast<double>(n));
  if (sd == 0.0)
    throw Error(ErrorCode::DegenerateIntensities, "in-mask variance is zero");

  Volume3D out = vol;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = mask.data[i] != 0.0f
                      ? static_cast<float>((vol.data[i] - mean) / sd)
                      : 0.0f;
  return out;
}

Volume3D csf_normalize(const Volume3D& vol, const BrainMasks& masks) {
  require_same_grid(vol, masks.csf);
  std::vector<double> csf_vals;
  for (size_t i = 0; i < vol.data.size(); ++i)
    if (masks.csf.data[i] != 0.0f) csf_vals.push_back(vol.data[i]);
  if (csf_vals.empty()) throw Error(ErrorCode::EmptyMask, "csf mask is empty");

  double med = median_of(std::move(csf_vals));
  if (std::abs(med) <= 1e-9) throw Error(ErrorCode::ZeroMedian, "csf median is ~0");

  Volume3D out = vol;
  for (auto& v : out.data) v = static_cast<float>(v / med);
  return out;
}

Volume3D difference_map(const Volume3D& t1, const Volume3D& flair, const BrainMasks& masks) {
  require_same_grid(t1, flair);
  require_same_grid(t1, masks.brain);
  Volume3D a = csf_normalize(t1, masks);
  Volume3D b = csf_normalize(flair, masks);
  Volume3D out = a;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = masks.brain.data[i] != 0.0f ? a.data[i] - b.data[i] : 0.0f;
  return out;
}

}  // namespace lacuna
