#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>

#include "doctest.h"
#include "lacuna/eval.hpp"
#include "lacuna/rng.hpp"

using namespace lacuna;

namespace {

Volume3D random_mask(Rng& rng, int n, double p) {
  Volume3D m(n, n, n);
  for (auto& v : m.data) v = rng.bernoulli(p) ? 1.0f : 0.0f;
  return m;
}

// Independent BFS flood-fill labeling used as the partition oracle.
std::vector<std::set<size_t>> bfs_components(const Volume3D& mask, int connectivity) {
  std::vector<std::set<size_t>> comps;
  std::vector<bool> seen(mask.size(), false);
  const int nx = mask.dims[0], ny = mask.dims[1], nz = mask.dims[2];
  for (size_t start = 0; start < mask.size(); ++start) {
    if (seen[start] || mask.data[start] == 0.0f) continue;
    std::set<size_t> comp;
    std::queue<size_t> q;
    q.push(start);
    seen[start] = true;
    while (!q.empty()) {
      size_t cur = q.front();
      q.pop();
      comp.insert(cur);
      int x = static_cast<int>(cur % nx);
      int y = static_cast<int>((cur / nx) % ny);
      int z = static_cast<int>(cur / (static_cast<size_t>(nx) * ny));
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
            int ax = x + dx, ay = y + dy, az = z + dz;
            if (ax < 0 || ay < 0 || az < 0 || ax >= nx || ay >= ny || az >= nz) continue;
            size_t ni = mask.index(ax, ay, az);
            if (!seen[ni] && mask.data[ni] != 0.0f) {
              seen[ni] = true;
              q.push(ni);
            }
          }
    }
    comps.push_back(std::move(comp));
  }
  return comps;
}

std::vector<std::set<size_t>> partition_of(const ComponentSet& set) {
  std::vector<std::set<size_t>> out(set.count());
  for (const auto& c : set.components)
    out[static_cast<size_t>(c.id) - 1] = std::set<size_t>(c.voxels.begin(), c.voxels.end());
  return out;
}

bool same_partition(std::vector<std::set<size_t>> a, std::vector<std::set<size_t>> b) {
  auto key = [](const std::set<size_t>& s) { return *s.begin(); };
  auto cmp = [&](const std::set<size_t>& x, const std::set<size_t>& y) { return key(x) < key(y); };
  std::sort(a.begin(), a.end(), cmp);
  std::sort(b.begin(), b.end(), cmp);
  return a == b;
}

}  // namespace

TEST_CASE("components: empty mask") {
  Volume3D m(4, 4, 4, 0.0f);
  CHECK(connected_components(m).count() == 0);
}

TEST_CASE("components: diagonal pair split by connectivity") {
  Volume3D m(4, 4, 4, 0.0f);
  m.at(1, 1, 1) = 1.0f;
  m.at(2, 2, 2) = 1.0f;
  CHECK(connected_components(m, 26).count() == 1);
  CHECK(connected_components(m, 6).count() == 2);
}

TEST_CASE("components: 200 random masks match BFS oracle at both connectivities") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    Volume3D m = random_mask(rng, 16, 0.2 + 0.4 * rng.uniform());
    for (int conn : {6, 26}) {
      ComponentSet got = connected_components(m, conn);
      auto oracle = bfs_components(m, conn);
      REQUIRE(got.count() == oracle.size());
      CHECK(same_partition(partition_of(got), oracle));
    }
  }
}

TEST_CASE("components: centroids in world mm") {
  Volume3D m(5, 5, 5, 0.0f);
  m.spacing = {2.0, 2.0, 2.0};
  for (int i = 0; i < 3; ++i) m.affine[i][i] = 2.0;
  m.at(1, 2, 3) = 1.0f;
  m.at(2, 2, 3) = 1.0f;
  auto set = connected_components(m);
  REQUIRE(set.count() == 1);
  CHECK(set.components[0].centroid_mm[0] == doctest::Approx(3.0));
  CHECK(set.components[0].centroid_mm[1] == doctest::Approx(4.0));
  CHECK(set.components[0].centroid_mm[2] == doctest::Approx(6.0));
}

namespace {

Volume3D blob_mask(int n, const std::vector<std::array<int, 3>>& centers, int r = 1) {
  Volume3D m(n, n, n, 0.0f);
  for (auto& c : centers)
    for (int dz = -r; dz <= r; ++dz)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
          if (m.in_bounds(x, y, z)) m.at(x, y, z) = 1.0f;
        }
  return m;
}

}  // namespace

TEST_CASE("sensitivity: exact prediction") {
  Volume3D gt = blob_mask(16, {{3, 3, 3}, {10, 10, 10}});
  auto g = connected_components(gt);
  auto r = instance_sensitivity(g, g);
  CHECK(r.sensitivity.value() == doctest::Approx(1.0));
  CHECK(r.fp_count == 0);
}

TEST_CASE("sensitivity: 3 of 4 detected plus a stray blob") {
  Volume3D gt = blob_mask(24, {{3, 3, 3}, {10, 10, 10}, {18, 18, 18}, {3, 18, 3}});
  Volume3D pred = blob_mask(24, {{3, 3, 3}, {10, 10, 10}, {18, 18, 18}, {18, 3, 18}});
  auto r = instance_sensitivity(connected_components(pred), connected_components(gt));
  CHECK(r.total == 4);
  CHECK(r.detected == 3);
  CHECK(r.sensitivity.value() == doctest::Approx(0.75));
  CHECK(r.fp_count == 1);
}

TEST_CASE("sensitivity: one predicted component spanning two GT components") {
  Volume3D gt(12, 1, 1, 0.0f);
  gt.data[2] = 1.0f;
  gt.data[8] = 1.0f;
  Volume3D pred(12, 1, 1, 0.0f);
  for (int i = 1; i <= 9; ++i) pred.data[i] = 1.0f;
  auto r = instance_sensitivity(connected_components(pred), connected_components(gt));
  CHECK(r.detected == 2);
  CHECK(r.fp_count == 0);
}

TEST_CASE("sensitivity: zero-GT scan reports absent sensitivity but counts FPs") {
  Volume3D gt(8, 8, 8, 0.0f);
  Volume3D pred = blob_mask(8, {{4, 4, 4}});
  auto r = instance_sensitivity(connected_components(pred), connected_components(gt));
  CHECK(!r.sensitivity.has_value());
  CHECK(r.fp_count == 1);
}

TEST_CASE("sensitivity: alternate detection rules") {
  // pred is a 1x1x5 bar whose centroid sits outside the single GT voxel
  Volume3D gt(8, 1, 1, 0.0f);
  gt.data[0] = 1.0f;
  Volume3D pred(8, 1, 1, 0.0f);
  for (int i = 0; i < 5; ++i) pred.data[i] = 1.0f;
  auto p = connected_components(pred);
  auto g = connected_components(gt);

  CHECK(instance_sensitivity(p, g).detected == 1);
  CHECK(instance_sensitivity(p, g, DetectionRule::CentroidInside).detected == 0);
  CHECK(instance_sensitivity(p, g, DetectionRule::CentroidInside).fp_count == 1);
  // IoU 1/5 = 0.2: below 0.25, above 0.1
  CHECK(instance_sensitivity(p, g, DetectionRule::IoU, 0.25).detected == 0);
  CHECK(instance_sensitivity(p, g, DetectionRule::IoU, 0.1).detected == 1);
  CHECK(instance_sensitivity(g, g, DetectionRule::IoU, 0.99).detected == 1);
}

TEST_CASE("sensitivity: monotone in added predicted voxels") {
  Rng rng(5);
  Volume3D gt = random_mask(rng, 12, 0.1);
  Volume3D pred = random_mask(rng, 12, 0.05);
  auto base = instance_sensitivity(connected_components(pred), connected_components(gt));
  // add voxels
  Volume3D more = pred;
  for (size_t i = 0; i < more.data.size(); ++i)
    if (rng.bernoulli(0.05)) more.data[i] = 1.0f;
  auto grown = instance_sensitivity(connected_components(more), connected_components(gt));
  CHECK(grown.detected >= base.detected);
}

TEST_CASE("bca: paper per-class recalls and edge cases") {
  // recalls 0.81, 0.82, 0.75 over 100-sample classes
  Confusion3 m{};
  m[0] = {81, 10, 9};
  m[1] = {9, 82, 9};
  m[2] = {10, 15, 75};
  CHECK(bca(m) == doctest::Approx((0.81 + 0.82 + 0.75) / 3.0).epsilon(1e-9));

  Confusion3 ident{};
  ident[0][0] = ident[1][1] = ident[2][2] = 5;
  CHECK(bca(ident) == doctest::Approx(1.0));

  // one class of 10 all wrong, others perfect: group-size normalization
  Confusion3 skew{};
  skew[0][0] = 100;
  skew[1][1] = 7;
  skew[2] = {10, 0, 0};
  CHECK(bca(skew) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("bca: row-scaling invariance and empty row error") {
  Confusion3 m{};
  m[0] = {8, 1, 1};
  m[1] = {2, 6, 2};
  m[2] = {1, 1, 3};
  double base = bca(m);
  Confusion3 scaled = m;
  for (int c = 0; c < 3; ++c) scaled[1][c] *= 7;
  CHECK(bca(scaled) == doctest::Approx(base).epsilon(1e-12));

  Confusion3 empty_row = m;
  empty_row[2] = {0, 0, 0};
  CHECK_THROWS_WITH_AS(bca(empty_row), doctest::Contains("EmptyClassRow"), Error);
}

TEST_CASE("confusion: 17 of 22 on the diagonal and trivia") {
  std::vector<std::pair<BurdenCategory, BurdenCategory>> pairs;
  auto cat = [](int i) { return static_cast<BurdenCategory>(i); };
  for (int i = 0; i < 17; ++i) pairs.push_back({cat(i % 3), cat(i % 3)});
  for (int i = 0; i < 5; ++i) pairs.push_back({cat(i % 3), cat((i + 1) % 3)});
  auto m = confusion_matrix(pairs);
  long total = 0;
  for (auto& row : m)
    for (long v : row) total += v;
  CHECK(total == 22);
  CHECK(confusion_accuracy(m) == doctest::Approx(17.0 / 22.0));

  CHECK(confusion_accuracy(confusion_matrix({})) == 0.0);
  auto single = confusion_matrix({{BurdenCategory::C1, BurdenCategory::C0},
                                  {BurdenCategory::C1, BurdenCategory::C2}});
  CHECK(single[0][0] + single[0][1] + single[0][2] == 0);
  CHECK(single[2][0] + single[2][1] + single[2][2] == 0);
  CHECK(single[1][0] == 1);
  CHECK(single[1][2] == 1);
}

TEST_CASE("kfold: balanced 30 items over 10 folds") {
  std::vector<std::pair<std::string, BurdenCategory>> items;
  for (int i = 0; i < 30; ++i)
    items.push_back({"s" + std::to_string(i), static_cast<BurdenCategory>(i % 3)});
  auto fold = stratified_kfold(items, 10, 123);
  std::map<int, std::array<int, 3>> per_fold;
  for (size_t i = 0; i < items.size(); ++i)
    per_fold[fold[i]][static_cast<int>(items[i].second)]++;
  REQUIRE(per_fold.size() == 10);
  for (auto& [f, counts] : per_fold)
    for (int c = 0; c < 3; ++c) CHECK(counts[c] == 1);
}

TEST_CASE("kfold: k=1, determinism, KTooLarge") {
  std::vector<std::pair<std::string, BurdenCategory>> items = {
      {"a", BurdenCategory::C0}, {"b", BurdenCategory::C1}, {"c", BurdenCategory::C2}};
  auto one = stratified_kfold(items, 1, 7);
  for (int f : one) CHECK(f == 0);
  CHECK(stratified_kfold(items, 3, 7) == stratified_kfold(items, 3, 7));
  CHECK_THROWS_WITH_AS(stratified_kfold(items, 4, 7), doctest::Contains("KTooLarge"), Error);
}

TEST_CASE("kfold: category balance within +/-1 over 50 seeds") {
  Rng meta(55);
  std::vector<std::pair<std::string, BurdenCategory>> items;
  // paper-like mix: 140 scans, uneven categories
  for (int i = 0; i < 140; ++i) {
    BurdenCategory c = i < 30 ? BurdenCategory::C0 : (i < 105 ? BurdenCategory::C1 : BurdenCategory::C2);
    items.push_back({"s" + std::to_string(i), c});
  }
  for (int s = 0; s < 50; ++s) {
    auto fold = stratified_kfold(items, 10, meta.next_u64());
    std::array<std::array<int, 3>, 10> counts{};
    std::array<int, 10> sizes{};
    for (size_t i = 0; i < items.size(); ++i) {
      counts[static_cast<size_t>(fold[i])][static_cast<int>(items[i].second)]++;
      sizes[static_cast<size_t>(fold[i])]++;
    }
    for (int c = 0; c < 3; ++c) {
      int lo = 1000, hi = -1;
      for (int f = 0; f < 10; ++f) {
        lo = std::min(lo, counts[f][c]);
        hi = std::max(hi, counts[f][c]);
      }
      CHECK(hi - lo <= 1);
    }
    int lo = 1000, hi = -1;
    for (int f = 0; f < 10; ++f) {
      lo = std::min(lo, sizes[f]);
      hi = std::max(hi, sizes[f]);
    }
    CHECK(hi - lo <= 2);  // three independent round-robins, each within 1
  }
}

TEST_CASE("ttest: error paths and symmetric case") {
  std::vector<double> a = {1, 2, 3};
  CHECK_THROWS_WITH_AS(paired_ttest(a, a), doctest::Contains("ZeroVariance"), Error);
  CHECK_THROWS_WITH_AS(paired_ttest(a, {1.0, 2.0}), doctest::Contains("LengthMismatch"), Error);

  auto r = paired_ttest({1.0, -1.0}, {0.0, 0.0});
  CHECK(r.t == doctest::Approx(0.0));
  CHECK(r.p_two_sided == doctest::Approx(1.0));
}

TEST_CASE("ttest: standard critical values") {
  // n=10, t=2.262 -> p=0.05; n=30, t=2.045 -> p=0.05
  // construct differences with exact mean and sample sd 1 so t is exact
  auto run = [](int n, double t_target) {
    std::vector<double> d(n);
    // half +1, half -1 around the mean gives sd sqrt(n/(n-1)); scale to sd 1
    double s = std::sqrt(static_cast<double>(n - 1) / n);
    for (int i = 0; i < n; ++i) d[i] = (i % 2 == 0 ? s : -s);
    double mean = t_target / std::sqrt(static_cast<double>(n));
    std::vector<double> a(n), b(n, 0.0);
    for (int i = 0; i < n; ++i) a[i] = d[i] + mean;
    return paired_ttest(a, b);
  };
  auto r10 = run(10, 2.262);
  CHECK(r10.dof == 9);
  CHECK(std::abs(r10.p_two_sided - 0.05) < 5e-4);
  auto r30 = run(30, 2.045);
  CHECK(r30.dof == 29);
  CHECK(std::abs(r30.p_two_sided - 0.05) < 5e-4);
}

TEST_CASE("ttest: agrees with a sign-permutation test on desk cases") {
  Rng rng(31);
  // n large enough that the t reference and the exact sign-flip null agree
  // within the 0.01 bound
  for (int trial = 0; trial < 5; ++trial) {
    int n = 20;
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      b[i] = rng.uniform();
      a[i] = b[i] + 0.3 * rng.gaussian() + 0.2;
    }
    auto r = paired_ttest(a, b);

    // permutation oracle: sign flips of the differences, two-sided on |t|
    std::vector<double> d(n);
    for (int i = 0; i < n; ++i) d[i] = a[i] - b[i];
    auto tstat = [&](const std::vector<double>& v) {
      double mean = 0;
      for (double x : v) mean += x;
      mean /= n;
      double ss = 0;
      for (double x : v) ss += (x - mean) * (x - mean);
      double sd = std::sqrt(ss / (n - 1));
      return mean / (sd / std::sqrt(static_cast<double>(n)));
    };
    double t_obs = std::abs(tstat(d));
    long extreme = 0, draws = 20000;
    for (long it = 0; it < draws; ++it) {
      std::vector<double> flipped(n);
      for (int i = 0; i < n; ++i) flipped[i] = rng.bernoulli(0.5) ? d[i] : -d[i];
      if (std::abs(tstat(flipped)) >= t_obs - 1e-12) extreme++;
    }
    double p_perm = static_cast<double>(extreme) / static_cast<double>(draws);
    CHECK(std::abs(r.p_two_sided - p_perm) < 0.01);
  }
}

TEST_CASE("incomplete beta: reference values") {
  CHECK(regularized_incomplete_beta(0.5, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
  // I_x(1,1) = x
  for (double x : {0.1, 0.37, 0.99})
    CHECK(regularized_incomplete_beta(1, 1, x) == doctest::Approx(x).epsilon(1e-10));
}
