#include "lacuna/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "lacuna/rng.hpp"

namespace lacuna {

double Component::equivalent_diameter_mm(const std::array<double, 3>& spacing) const {
  double voxel_mm3 = spacing[0] * spacing[1] * spacing[2];
  double volume = static_cast<double>(voxel_count) * voxel_mm3;
  return std::cbrt(6.0 * volume / M_PI);
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

ComponentSet connected_components(const Volume3D& mask, int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw Error(ErrorCode::ConfigError, "connectivity must be 6 or 26");
  mask.validate();

  const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  std::vector<int> provisional(mask.size(), -1);
  UnionFind uf;

  // Pass 1: scan in index order, merging with already-visited neighbors.
  std::vector<std::array<int, 3>> offsets;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;  // only prior voxels
        int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }

  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        size_t idx = mask.index(x, y, z);
        if (mask.data[idx] == 0.0f) continue;
        int label = -1;
        for (const auto& o : offsets) {
          int ax = x + o[0], ay = y + o[1], az = z + o[2];
          if (!mask.in_bounds(ax, ay, az)) continue;
          int nb = provisional[mask.index(ax, ay, az)];
          if (nb < 0) continue;
          if (label < 0)
            label = uf.find(nb);
          else
            uf.unite(label, nb);
        }
        if (label < 0) label = uf.make();
        provisional[idx] = label;
      }

  // Pass 2: compress labels to dense ids 1..K in first-appearance order.
  std::map<int, int> dense;
  ComponentSet set;
  set.labels = mask;
  std::fill(set.labels.data.begin(), set.labels.data.end(), 0.0f);
  for (size_t i = 0; i < provisional.size(); ++i) {
    if (provisional[i] < 0) continue;
    int root = uf.find(provisional[i]);
    auto [it, inserted] = dense.emplace(root, static_cast<int>(dense.size()) + 1);
    int id = it->second;
    set.labels.data[i] = static_cast<float>(id);
    if (inserted) {
      Component c;
      c.id = id;
      set.components.push_back(c);
    }
    Component& c = set.components[static_cast<size_t>(id) - 1];
    c.voxel_count++;
    c.voxels.push_back(i);
  }

  for (auto& c : set.components) {
    double acc[3] = {0, 0, 0};
    for (size_t idx : c.voxels) {
      size_t rem = idx;
      int x = static_cast<int>(rem % nx);
      rem /= nx;
      int y = static_cast<int>(rem % ny);
      int z = static_cast<int>(rem / ny);
      auto w = mask.world(x, y, z);
      for (int i = 0; i < 3; ++i) acc[i] += w[i];
    }
    for (int i = 0; i < 3; ++i) c.centroid_mm[i] = acc[i] / static_cast<double>(c.voxel_count);
  }
  return set;
}

SensitivityResult instance_sensitivity(const ComponentSet& pred, const ComponentSet& gt,
                                       DetectionRule rule, double iou_threshold) {
  require_same_grid(pred.labels, gt.labels);

  SensitivityResult r;
  r.total = gt.count();

  std::vector<bool> gt_detected(gt.count(), false);
  std::vector<bool> pred_hits_gt(pred.count(), false);
  if (rule == DetectionRule::AnyVoxel) {
    for (size_t i = 0; i < pred.labels.data.size(); ++i) {
      int p = static_cast<int>(pred.labels.data[i]);
      int g = static_cast<int>(gt.labels.data[i]);
      if (p > 0 && g > 0) {
        gt_detected[static_cast<size_t>(g) - 1] = true;
        pred_hits_gt[static_cast<size_t>(p) - 1] = true;
      }
    }
  } else if (rule == DetectionRule::CentroidInside) {
    const int nx = pred.labels.dims[0], ny = pred.labels.dims[1];
    for (const auto& c : pred.components) {
      double acc[3] = {0, 0, 0};
      for (size_t idx : c.voxels) {
        acc[0] += static_cast<double>(idx % nx);
        acc[1] += static_cast<double>((idx / nx) % ny);
        acc[2] += static_cast<double>(idx / (static_cast<size_t>(nx) * ny));
      }
      int cx = static_cast<int>(std::lround(acc[0] / static_cast<double>(c.voxel_count)));
      int cy = static_cast<int>(std::lround(acc[1] / static_cast<double>(c.voxel_count)));
      int cz = static_cast<int>(std::lround(acc[2] / static_cast<double>(c.voxel_count)));
      int g = gt.labels.in_bounds(cx, cy, cz)
                  ? static_cast<int>(gt.labels.data[gt.labels.index(cx, cy, cz)])
                  : 0;
      if (g > 0) {
        gt_detected[static_cast<size_t>(g) - 1] = true;
        pred_hits_gt[static_cast<size_t>(c.id) - 1] = true;
      }
    }
  } else {
    std::map<std::pair<int, int>, size_t> overlap;
    for (size_t i = 0; i < pred.labels.data.size(); ++i) {
      int p = static_cast<int>(pred.labels.data[i]);
      int g = static_cast<int>(gt.labels.data[i]);
      if (p > 0 && g > 0) overlap[{p, g}]++;
    }
    for (auto& [key, inter] : overlap) {
      auto [p, g] = key;
      size_t uni = pred.components[static_cast<size_t>(p) - 1].voxel_count +
                   gt.components[static_cast<size_t>(g) - 1].voxel_count - inter;
      if (static_cast<double>(inter) / static_cast<double>(uni) >= iou_threshold) {
        gt_detected[static_cast<size_t>(g) - 1] = true;
        pred_hits_gt[static_cast<size_t>(p) - 1] = true;
      }
    }
  }
  r.detected = static_cast<size_t>(std::count(gt_detected.begin(), gt_detected.end(), true));
  r.fp_count = static_cast<size_t>(std::count(pred_hits_gt.begin(), pred_hits_gt.end(), false));
  if (r.total > 0)
    r.sensitivity = static_cast<double>(r.detected) / static_cast<double>(r.total);
  return r;
}

Confusion3 confusion_matrix(const std::vector<std::pair<BurdenCategory, BurdenCategory>>& pairs) {
  Confusion3 m{};
  for (auto& [t, p] : pairs) m[static_cast<int>(t)][static_cast<int>(p)]++;
  return m;
}

double bca(const Confusion3& confusion) {
  double acc = 0.0;
  for (int r = 0; r < 3; ++r) {
    long row = confusion[r][0] + confusion[r][1] + confusion[r][2];
    if (row == 0)
      throw Error(ErrorCode::EmptyClassRow, "class row " + std::to_string(r) + " has no samples");
    acc += static_cast<double>(confusion[r][r]) / static_cast<double>(row);
  }
  return acc / 3.0;
}

double confusion_accuracy(const Confusion3& confusion) {
  long total = 0, diag = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      total += confusion[r][c];
      if (r == c) diag += confusion[r][c];
    }
  if (total == 0) return 0.0;
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<int> stratified_kfold(const std::vector<std::pair<std::string, BurdenCategory>>& items,
                                  int k, uint64_t seed) {
  if (k < 1) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  if (static_cast<size_t>(k) > items.size())
    throw Error(ErrorCode::KTooLarge, "k exceeds item count");

  std::vector<int> fold(items.size(), -1);
  Rng rng(seed);
  for (int cat = 0; cat < 3; ++cat) {
    std::vector<size_t> members;
    for (size_t i = 0; i < items.size(); ++i)
      if (static_cast<int>(items[i].second) == cat) members.push_back(i);
    // Fisher-Yates with the deterministic rng, then round-robin.
    for (size_t i = members.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(members[i - 1], members[j]);
    }
    for (size_t i = 0; i < members.size(); ++i)
      fold[members[i]] = static_cast<int>(i % static_cast<size_t>(k));
  }
  return fold;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;

  // Lentz's continued fraction for I_x(a,b); use the symmetry relation when
  // x is past the central cut for convergence.
  auto cont_frac = [](double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-14;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
      double m2 = 2.0 * m;
      double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
      d = 1.0 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < eps) break;
    }
    return h;
  };

  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * cont_frac(a, b, x) / a;
  return 1.0 - front * cont_frac(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::LengthMismatch, "samples have different lengths");
  if (a.size() < 2)
    throw Error(ErrorCode::LengthMismatch, "need at least 2 pairs");

  const size_t n = a.size();
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0)
    throw Error(ErrorCode::ZeroVariance, "differences are all identical");

  TTestResult r;
  r.dof = static_cast<long>(n) - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  double dof = static_cast<double>(r.dof);
  double x = dof / (dof + r.t * r.t);
  r.p_two_sided = regularized_incomplete_beta(dof / 2.0, 0.5, x);
  return r;
}

}  // namespace lacuna
