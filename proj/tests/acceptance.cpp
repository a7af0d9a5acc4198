// Acceptance gate: one check per release criterion, one PASS/FAIL line each.
// Criteria 4, 5 run the committed desk cross-validation in-process; criterion
// 8 exercises the installed binary (path in argv[1]).
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lacuna/nifti.hpp"
#include "lacuna/phantom.hpp"
#include "lacuna/pipeline.hpp"
#include "lacuna/refcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lacuna;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::printf("%s  criterion %d: %s\n", pass ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!pass) g_failures++;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// --- 1: metric arithmetic ---------------------------------------------------

void criterion1() {
  // rows with per-class recalls exactly 0.81, 0.82, 0.75
  Confusion3 recalls{{{81, 10, 9}, {9, 82, 9}, {10, 15, 75}}};
  double b = bca(recalls);
  bool ok = std::abs(b - (0.81 + 0.82 + 0.75) / 3.0) < 1e-6;

  // 17 on the diagonal out of 22 scans
  Confusion3 conf{{{6, 1, 0}, {2, 6, 1}, {0, 1, 5}}};
  double acc = confusion_accuracy(conf);
  ok = ok && acc == 17.0 / 22.0;
  report(1, ok, fmt("bca=%.7f (want 0.7933333), accuracy=%.6f (want 17/22)", b, acc));
}

// --- 2: gradient suite ------------------------------------------------------

void criterion2() {
  auto start = std::chrono::steady_clock::now();
  refcheck::GradcheckReport rep = refcheck::run_gradcheck_suite(123, 20);
  double sec = seconds_since(start);
  bool ok = rep.all_pass() && sec < 120.0;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& e : rep.entries) {
    if (!e.pass()) ok = false;
    if (e.max_rel_error / e.tolerance > worst) {
      worst = e.max_rel_error / e.tolerance;
      worst_op = e.op;
    }
  }
  report(2, ok, fmt("%zu ops, worst %s at %.2fx tolerance, %.1fs (< 120s)", rep.entries.size(),
                    worst_op.c_str(), worst, sec));
}

// --- 3: connected-component oracle ------------------------------------------

// flood fill from each unvisited voxel; returns component id per voxel
std::vector<int> bfs_labels(const Volume3D& mask, int connectivity) {
  std::vector<int> labels(mask.size(), 0);
  std::vector<size_t> stack;
  int next = 0;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x) {
        size_t i = mask.index(x, y, z);
        if (mask.data[i] == 0.0f || labels[i] != 0) continue;
        labels[i] = ++next;
        stack.push_back(i);
        while (!stack.empty()) {
          size_t cur = stack.back();
          stack.pop_back();
          int cx = static_cast<int>(cur % mask.dims[0]);
          int cy = static_cast<int>(cur / mask.dims[0] % mask.dims[1]);
          int cz = static_cast<int>(cur / mask.dims[0] / mask.dims[1]);
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1)
                  continue;
                int nx = cx + dx, ny = cy + dy, nz = cz + dz;
                if (!mask.in_bounds(nx, ny, nz)) continue;
                size_t ni = mask.index(nx, ny, nz);
                if (mask.data[ni] != 0.0f && labels[ni] == 0) {
                  labels[ni] = next;
                  stack.push_back(ni);
                }
              }
        }
      }
  return labels;
}

bool same_partition(const std::vector<int>& a, const std::vector<float>& b) {
  std::map<int, float> fwd;
  std::map<int, int> bwd;
  for (size_t i = 0; i < a.size(); ++i) {
    if ((a[i] != 0) != (b[i] != 0.0f)) return false;
    if (a[i] == 0) continue;
    int bl = static_cast<int>(b[i]);
    auto f = fwd.find(a[i]);
    if (f == fwd.end())
      fwd[a[i]] = static_cast<float>(bl);
    else if (static_cast<int>(f->second) != bl)
      return false;
    auto r = bwd.find(bl);
    if (r == bwd.end())
      bwd[bl] = a[i];
    else if (r->second != a[i])
      return false;
  }
  return true;
}

void criterion3() {
  auto start = std::chrono::steady_clock::now();
  Rng rng(31);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Volume3D mask(16, 16, 16);
    for (auto& v : mask.data) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
    for (int connectivity : {26, 6}) {
      ComponentSet cs = connected_components(mask, connectivity);
      if (!same_partition(bfs_labels(mask, connectivity), cs.labels.data)) mismatches++;
    }
  }
  double sec = seconds_since(start);
  report(3, mismatches == 0 && sec < 30.0,
         fmt("200 masks x 2 connectivities, %d mismatches, %.1fs (< 30s)", mismatches, sec));
}

// --- 4, 5: desk cross-validation --------------------------------------------

json load_json_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

struct DeskSetup {
  std::vector<PreparedScan> cohort;
  LabelVolume atlas;
  CrossvalConfig cv;
};

DeskSetup build_desk_setup() {
  json cfg = load_json_file(fs::path(LACUNA_SOURCE_DIR) / "configs" / "desk_crossval.json");
  uint64_t master_seed = cfg.at("seed").get<uint64_t>();
  const json& p = cfg.at("phantom");
  PhantomConfig base;
  base.dims = p.at("dims").get<std::array<int, 3>>();
  base.spacing = p.at("spacing").get<std::array<double, 3>>();
  base.lacune_diameter_range_mm = p.at("lacune_diameter_range_mm").get<std::array<double, 2>>();
  base.mimic_count_range = p.at("mimic_count_range").get<std::array<int, 2>>();
  base.mimic_diameter_range_mm = p.at("mimic_diameter_range_mm").get<std::array<double, 2>>();
  base.noise_sigma = p.at("noise_sigma").get<double>();
  base.bias_amplitude = p.at("bias_amplitude").get<double>();

  auto counts = cfg.at("cohort").at("counts_per_category").get<std::array<int, 3>>();
  auto ranges =
      cfg.at("cohort").at("category_count_ranges").get<std::array<std::array<int, 2>, 3>>();

  PreprocessConfig pp;
  pp.bias_order = cfg.at("preprocess").at("bias_order").get<int>();

  DeskSetup out;
  int index = 0;
  for (int cat = 0; cat < 3; ++cat)
    for (int i = 0; i < counts[static_cast<size_t>(cat)]; ++i, ++index) {
      PhantomConfig pc = base;
      pc.lacune_count_range = ranges[static_cast<size_t>(cat)];
      pc.seed = Rng::split(master_seed, static_cast<uint64_t>(index));
      PhantomSample sample = generate_phantom(pc);
      if (out.cohort.empty()) out.atlas = sample.region_atlas;
      PreparedScan scan = prepare_scan(sample, pp);
      char id[16];
      std::snprintf(id, sizeof(id), "s%03d", index);
      scan.id = id;
      out.cohort.push_back(std::move(scan));
    }

  const json& t = cfg.at("train");
  out.cv.k = cfg.at("crossval").at("k").get<int>();
  out.cv.seed = master_seed;
  out.cv.train.patch_size = t.at("patch_size").get<int>();
  out.cv.train.stage1_patch_size = t.value("stage1_patch_size", 0);
  out.cv.train.stage1_epochs = t.value("stage1_epochs", 0);
  out.cv.train.patches_per_epoch = t.at("patches_per_epoch").get<int>();
  out.cv.train.epochs = t.at("epochs").get<int>();
  out.cv.train.pos_fraction = t.at("pos_fraction").get<double>();
  out.cv.train.augment = t.at("augment").get<bool>();
  out.cv.train.adam.lr = t.at("lr").get<double>();
  out.cv.train.loss.w_fn = t.at("w_fn").get<double>();
  out.cv.train.loss.lambda_burden = t.at("lambda_burden").get<double>();
  out.cv.train.stage1_loss = t.at("stage1_loss").get<std::string>();
  out.cv.train.unet_depth = t.at("unet_depth").get<int>();
  out.cv.train.unet_base_channels = t.at("unet_base_channels").get<int>();
  const json& post = cfg.at("postprocess");
  out.cv.post.threshold = post.at("threshold").get<double>();
  out.cv.post.min_component_voxels = post.at("min_component_voxels").get<size_t>();
  out.cv.post.connectivity = post.at("connectivity").get<int>();
  return out;
}

void criteria4and5() {
  auto start = std::chrono::steady_clock::now();
  DeskSetup setup = build_desk_setup();

  CrossvalConfig fnw_cfg = setup.cv;
  fnw_cfg.train.stage1_loss = "fnw";
  CrossvalResult fnw = run_crossval(setup.cohort, setup.atlas, fnw_cfg);

  CrossvalConfig vr_cfg = setup.cv;
  vr_cfg.train.stage1_loss = "voxel_ratio";
  CrossvalResult vr = run_crossval(setup.cohort, setup.atlas, vr_cfg);
  double sec = seconds_since(start);

  std::vector<double> a, b;
  for (size_t i = 0; i < fnw.scans.size(); ++i)
    if (fnw.scans[i].sensitivity && vr.scans[i].sensitivity) {
      a.push_back(*fnw.scans[i].sensitivity);
      b.push_back(*vr.scans[i].sensitivity);
    }
  double p = 1.0;
  bool direction = fnw.sensitivity_mean > vr.sensitivity_mean;
  try {
    p = paired_ttest(a, b).p_two_sided;
  } catch (const Error&) {
    // identical per-scan sensitivities: no evidence for the claim
    direction = false;
  }
  int folds_higher = 0;
  for (size_t f = 0; f < fnw.fold_mean_sensitivity.size(); ++f)
    if (fnw.fold_mean_sensitivity[f] > vr.fold_mean_sensitivity[f]) folds_higher++;

  bool ok4 = direction && p < 0.05 && folds_higher >= 4;
  report(4, ok4,
         fmt("fnw %.3f vs voxel_ratio %.3f, p=%.2e, fnw higher in %d/5 folds, %.0fs "
             "(target < 1800s)",
             fnw.sensitivity_mean, vr.sensitivity_mean, p, folds_higher, sec));

  bool ok5 = fnw.sensitivity_mean >= 0.8 && fnw.bca_value >= 0.7;
  report(5, ok5,
         fmt("held-out sensitivity %.3f (>= 0.8), burden BCA %.3f (>= 0.7)",
             fnw.sensitivity_mean, fnw.bca_value));
}

// --- 6: t-test oracle -------------------------------------------------------

// n paired differences with exact sample mean m and sample sd 1
std::vector<double> exact_diffs(int n, double m) {
  std::vector<double> d(static_cast<size_t>(n));
  double c = std::sqrt(static_cast<double>(n - 1) / n);
  for (int i = 0; i < n; ++i) d[static_cast<size_t>(i)] = m + (i % 2 == 0 ? c : -c);
  return d;
}

void criterion6() {
  bool ok = true;
  std::string detail;
  for (auto [n, t] : {std::pair<int, double>{10, 2.262}, {30, 2.045}}) {
    std::vector<double> a = exact_diffs(n, t / std::sqrt(n));
    std::vector<double> b(a.size(), 0.0);
    double p = paired_ttest(a, b).p_two_sided;
    if (std::abs(p - 0.05) > 5e-4) ok = false;
    detail += fmt("n=%d p=%.5f  ", n, p);
  }

  Rng rng(77);
  double worst_gap = 0.0;
  for (int scenario = 0; scenario < 5; ++scenario) {
    const int n = 20;
    std::vector<double> a(n), b(n, 0.0);
    for (auto& v : a) v = rng.gaussian() + 0.35;
    TTestResult tt = paired_ttest(a, b);
    int extreme = 0;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
      std::vector<double> flipped(a);
      for (auto& v : flipped) {
        if (rng.uniform() < 0.5) v = -v;
      }
      double tp = paired_ttest(flipped, b).t;
      if (std::abs(tp) >= std::abs(tt.t)) extreme++;
    }
    double p_perm = static_cast<double>(extreme) / draws;
    worst_gap = std::max(worst_gap, std::abs(p_perm - tt.p_two_sided));
  }
  if (worst_gap >= 0.01) ok = false;
  detail += fmt("max |perm - analytic| = %.4f (< 0.01)", worst_gap);
  report(6, ok, detail);
}

// --- 7: format round-trip ---------------------------------------------------

// one of the 48 signed axis permutations of a RAS volume
Volume3D apply_orientation(const Volume3D& ras, const int perm[3], const bool flip[3]) {
  Volume3D out;
  for (int j = 0; j < 3; ++j) {
    out.dims[j] = ras.dims[perm[j]];
    out.spacing[j] = ras.spacing[perm[j]];
  }
  out.data.resize(ras.size());
  out.affine = Volume3D::identity_affine();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.affine[i][j] = 0.0;
  for (int j = 0; j < 3; ++j) {
    int w = perm[j];
    out.affine[w][j] = flip[j] ? -ras.spacing[w] : ras.spacing[w];
    double idx0 = flip[j] ? out.dims[j] - 1 : 0;
    out.affine[w][3] = ras.affine[w][w] * idx0 + ras.affine[w][3];
  }
  for (int z = 0; z < out.dims[2]; ++z)
    for (int y = 0; y < out.dims[1]; ++y)
      for (int x = 0; x < out.dims[0]; ++x) {
        int v[3] = {x, y, z};
        int src[3];
        for (int j = 0; j < 3; ++j) src[perm[j]] = flip[j] ? out.dims[j] - 1 - v[j] : v[j];
        out.at(x, y, z) = ras.at(src[0], src[1], src[2]);
      }
  return out;
}

bool world_preserved(const Volume3D& a, const Volume3D& b, double tol) {
  if (a.size() != b.size()) return false;
  auto collect = [](const Volume3D& v) {
    std::vector<std::array<double, 4>> pts;
    for (int z = 0; z < v.dims[2]; ++z)
      for (int y = 0; y < v.dims[1]; ++y)
        for (int x = 0; x < v.dims[0]; ++x) {
          auto w = v.world(x, y, z);
          pts.push_back({w[0], w[1], w[2], static_cast<double>(v.at(x, y, z))});
        }
    std::sort(pts.begin(), pts.end());
    return pts;
  };
  auto pa = collect(a), pb = collect(b);
  for (size_t i = 0; i < pa.size(); ++i)
    for (int k = 0; k < 4; ++k)
      if (std::abs(pa[i][k] - pb[i][k]) > tol) return false;
  return true;
}

void criterion7() {
  Rng rng(41);
  int roundtrip_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Volume3D v(2 + static_cast<int>(rng.uniform() * 5), 2 + static_cast<int>(rng.uniform() * 5),
               2 + static_cast<int>(rng.uniform() * 5));
    for (int i = 0; i < 3; ++i) {
      // snapped to float so the float32 header can hold the grid exactly
      v.spacing[i] = static_cast<float>(0.5 + rng.uniform() * 2.0);
      v.affine[i][i] = v.spacing[i];
      v.affine[i][3] = static_cast<float>(rng.gaussian() * 10.0);
    }
    for (auto& d : v.data) d = static_cast<float>(rng.gaussian());
    Volume3D r = parse_nifti1(write_nifti1(v));
    if (r.dims != v.dims ||
        std::memcmp(r.data.data(), v.data.data(), v.size() * sizeof(float)) != 0 ||
        !r.same_grid(v, 1e-9))
      roundtrip_failures++;
  }

  Volume3D ras(3, 4, 5);
  for (auto& d : ras.data) d = static_cast<float>(rng.gaussian());
  ras.affine[0][3] = 1.0;
  ras.affine[1][3] = -2.0;
  ras.affine[2][3] = 0.5;
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  int orientation_failures = 0;
  for (const auto& perm : perms)
    for (int fbits = 0; fbits < 8; ++fbits) {
      bool flip[3] = {(fbits & 1) != 0, (fbits & 2) != 0, (fbits & 4) != 0};
      Volume3D oriented = apply_orientation(ras, perm, flip);
      if (!world_preserved(oriented, reorient_to_ras(oriented), 1e-6)) orientation_failures++;
    }
  report(7, roundtrip_failures == 0 && orientation_failures == 0,
         fmt("%d/100 round-trip failures, %d/48 orientation failures", roundtrip_failures,
             orientation_failures));
}

// --- 8: crossval determinism via the binary ---------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion8(const std::string& cli) {
  fs::path dir = fs::temp_directory_path() / "lacuna_acceptance_c8";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // reduced-scale cohort: the property under test is bit-for-bit replay, not
  // model quality
  json cfg;
  cfg["seed"] = 17;
  cfg["phantom"] = {{"dims", {24, 24, 24}},
                    {"lacune_diameter_range_mm", {3.0, 4.5}},
                    {"mimic_count_range", {0, 1}}};
  cfg["cohort"] = {{"counts_per_category", {2, 2, 2}},
                   {"category_count_ranges", {{0, 0}, {1, 2}, {4, 5}}}};
  cfg["train"] = {{"patch_size", 24}, {"patches_per_epoch", 4}, {"epochs", 2},
                  {"unet_depth", 2},  {"unet_base_channels", 2}};
  cfg["crossval"] = {{"k", 2}, {"compare_losses", true}};
  {
    std::ofstream out(dir / "cfg.json");
    out << cfg.dump();
  }

  auto run = [&](const std::string& config, const fs::path& out_dir) {
    std::string cmd = cli + " crossval --config " + config + " --out-dir " + out_dir.string() +
                      " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };

  bool ok = run((dir / "cfg.json").string(), dir / "a");
  ok = ok && run((dir / "a" / "manifest.json").string(), dir / "b");
  std::string detail = ok ? "" : "binary run failed; ";
  if (ok) {
    for (const char* name :
         {"metrics.json", "folds.json", "confusion_fnw.csv", "confusion_voxel_ratio.csv"}) {
      std::string a = slurp(dir / "a" / name);
      bool same = !a.empty() && a == slurp(dir / "b" / name);
      if (!same) {
        ok = false;
        detail += std::string(name) + " differs; ";
      }
    }
  }
  report(8, ok, ok ? "replay from manifest reproduced all metric files byte-for-byte" : detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-cli>\n");
    return 2;
  }
  criterion1();
  criterion2();
  criterion3();
  criterion6();
  criterion7();
  criterion8(argv[1]);
  criteria4and5();
  std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ACCEPTED" : "REJECTED", g_failures,
              g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
