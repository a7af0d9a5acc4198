#include "lacuna/phantom.hpp"

#include <cmath>
#include <vector>

#include "lacuna/rng.hpp"

namespace lacuna {

void PhantomConfig::validate() const {
  for (int d : dims)
    if (d < 16) throw Error(ErrorCode::ConfigError, "phantom dims must be >= 16");
  if (lacune_count_range[0] < 0 || lacune_count_range[1] < lacune_count_range[0])
    throw Error(ErrorCode::ConfigError, "bad lacune_count_range");
  if (mimic_count_range[0] < 0 || mimic_count_range[1] < mimic_count_range[0])
    throw Error(ErrorCode::ConfigError, "bad mimic_count_range");
  if (!(lacune_diameter_range_mm[0] >= 3.0))
    throw Error(ErrorCode::ConfigError, "lacune min diameter must be >= 3mm");
  if (!(mimic_diameter_range_mm[1] < 3.0))
    throw Error(ErrorCode::ConfigError, "mimic max diameter must be < 3mm");
  if (lacune_diameter_range_mm[1] < lacune_diameter_range_mm[0] ||
      mimic_diameter_range_mm[1] < mimic_diameter_range_mm[0])
    throw Error(ErrorCode::ConfigError, "bad diameter range");
  for (double s : spacing)
    if (!(s > 0.0)) throw Error(ErrorCode::ConfigError, "spacing must be > 0");
  if (noise_sigma < 0.0 || bias_amplitude < 0.0)
    throw Error(ErrorCode::ConfigError, "noise_sigma and bias_amplitude must be >= 0");
}

namespace {

enum Tissue : uint8_t { kBackground = 0, kCsf = 1, kGm = 2, kWm = 3 };

struct Lesion {
  std::vector<size_t> voxels;
  double fill = 1.0;  // 1 = fully CSF-like, lower = fainter
};

// Voxel indices inside a spheroid; empty when any voxel (with a one-voxel
// guard band) falls outside white matter or overlaps occupied space.
bool voxelize_lesion(const std::array<int, 3>& dims, const std::array<double, 3>& spacing,
                     const std::vector<uint8_t>& tissue, const std::vector<uint8_t>& occupied,
                     const std::array<double, 3>& center, const std::array<double, 3>& semi_axes,
                     std::vector<size_t>* out) {
  out->clear();
  int lo[3], hi[3];
  for (int i = 0; i < 3; ++i) {
    lo[i] = static_cast<int>(std::floor(center[i] - semi_axes[i] / spacing[i])) - 1;
    hi[i] = static_cast<int>(std::ceil(center[i] + semi_axes[i] / spacing[i])) + 1;
    if (lo[i] < 0 || hi[i] >= dims[i]) return false;
  }
  auto index = [&](int x, int y, int z) {
    return static_cast<size_t>(x) + static_cast<size_t>(dims[0]) * (static_cast<size_t>(y) + static_cast<size_t>(dims[1]) * z);
  };
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) {
        double rx = (x - center[0]) * spacing[0] / semi_axes[0];
        double ry = (y - center[1]) * spacing[1] / semi_axes[1];
        double rz = (z - center[2]) * spacing[2] / semi_axes[2];
        double r2 = rx * rx + ry * ry + rz * rz;
        if (r2 > 1.0) continue;
        size_t idx = index(x, y, z);
        if (tissue[idx] != kWm) return false;
        // guard band: neighbors must be lesion-free white matter
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              size_t nidx = index(x + dx, y + dy, z + dz);
              if (occupied[nidx]) return false;
              if (tissue[nidx] != kWm) return false;
            }
        out->push_back(idx);
      }
  return !out->empty();
}

}  // namespace

PhantomSample generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const auto& dims = cfg.dims;
  const auto& sp = cfg.spacing;
  const size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  const double cx = (dims[0] - 1) / 2.0, cy = (dims[1] - 1) / 2.0, cz = (dims[2] - 1) / 2.0;
  const double brain_r[3] = {0.42 * dims[0] * sp[0], 0.42 * dims[1] * sp[1], 0.42 * dims[2] * sp[2]};
  const double vent_r[3] = {0.10 * dims[0] * sp[0], 0.10 * dims[1] * sp[1], 0.10 * dims[2] * sp[2]};

  // Tissue map and octant atlas.
  std::vector<uint8_t> tissue(n, kBackground);
  std::vector<uint8_t> atlas(n, 0);
  {
    size_t idx = 0;
    for (int z = 0; z < dims[2]; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x, ++idx) {
          double dx = (x - cx) * sp[0], dy = (y - cy) * sp[1], dz = (z - cz) * sp[2];
          double rb = (dx / brain_r[0]) * (dx / brain_r[0]) + (dy / brain_r[1]) * (dy / brain_r[1]) +
                      (dz / brain_r[2]) * (dz / brain_r[2]);
          if (rb > 1.0) continue;
          double rv = (dx / vent_r[0]) * (dx / vent_r[0]) + (dy / vent_r[1]) * (dy / vent_r[1]) +
                      (dz / vent_r[2]) * (dz / vent_r[2]);
          if (rv <= 1.0)
            tissue[idx] = kCsf;
          else if (rb > 0.78 * 0.78)
            tissue[idx] = kGm;
          else
            tissue[idx] = kWm;
          atlas[idx] = static_cast<uint8_t>(1 + (dx >= 0 ? 1 : 0) + 2 * (dy >= 0 ? 1 : 0) + 4 * (dz >= 0 ? 1 : 0));
        }
  }

  // WM voxels per region, for placement sampling.
  std::vector<std::vector<size_t>> wm_by_region(9);
  for (size_t i = 0; i < n; ++i)
    if (tissue[i] == kWm) wm_by_region[atlas[i]].push_back(i);

  auto pick_region = [&]() {
    if (rng.bernoulli(kPriorHighProbability))
      return kPriorHighRegions[static_cast<size_t>(rng.uniform_int(0, 1))];
    int others[6];
    int m = 0;
    for (int r = 1; r <= 8; ++r)
      if (r != kPriorHighRegions[0] && r != kPriorHighRegions[1]) others[m++] = r;
    return others[rng.uniform_int(0, 5)];
  };

  std::vector<uint8_t> occupied(n, 0);
  std::vector<Lesion> lacunes, mimics;

  auto place_lesions = [&](int count, const std::array<double, 2>& diam_range, bool is_lacune,
                           std::vector<Lesion>* out) {
    std::vector<size_t> vox;
    for (int li = 0; li < count; ++li) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        int region = pick_region();
        const auto& candidates = wm_by_region[region];
        if (candidates.empty()) continue;
        size_t seed_idx = candidates[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
        size_t rem = seed_idx;
        std::array<double, 3> center;
        center[0] = static_cast<double>(rem % dims[0]) + rng.uniform(-0.5, 0.5);
        rem /= dims[0];
        center[1] = static_cast<double>(rem % dims[1]) + rng.uniform(-0.5, 0.5);
        center[2] = static_cast<double>(rem / dims[1]) + rng.uniform(-0.5, 0.5);

        double d = rng.uniform(diam_range[0], diam_range[1]);
        double s[3];
        for (double& v : s) v = rng.uniform(0.85, 1.15);
        double g = std::cbrt(s[0] * s[1] * s[2]);
        std::array<double, 3> semi{d / 2 * s[0] / g, d / 2 * s[1] / g, d / 2 * s[2] / g};

        if (!voxelize_lesion(dims, sp, tissue, occupied, center, semi, &vox)) continue;
        double voxel_mm3 = sp[0] * sp[1] * sp[2];
        double eq_d = std::cbrt(6.0 * static_cast<double>(vox.size()) * voxel_mm3 / M_PI);
        if (is_lacune) {
          if (eq_d < diam_range[0] || eq_d > diam_range[1]) continue;
        } else {
          if (eq_d >= 3.0) continue;
        }
        Lesion lesion;
        lesion.voxels = vox;
        lesion.fill = rng.uniform(0.75, 1.0);
        for (size_t v : vox) occupied[v] = 1;
        out->push_back(std::move(lesion));
        placed = true;
      }
      if (!placed)
        throw Error(ErrorCode::PlacementFailure,
                    std::string("cannot place ") + (is_lacune ? "lacune" : "mimic") + " without overlap");
    }
  };

  int lacune_count = static_cast<int>(rng.uniform_int(cfg.lacune_count_range[0], cfg.lacune_count_range[1]));
  int mimic_count = static_cast<int>(rng.uniform_int(cfg.mimic_count_range[0], cfg.mimic_count_range[1]));
  place_lesions(lacune_count, cfg.lacune_diameter_range_mm, true, &lacunes);
  place_lesions(mimic_count, cfg.mimic_diameter_range_mm, false, &mimics);

  // Intensity models (arbitrary units), CSF dark on both. Normal tissue is
  // proportional across modalities so the CSF-normalized difference map is
  // ~0 there; lacunes break the proportionality (CSF-like on T1w, only
  // partially suppressed on FLAIR).
  const double t1_mean[4] = {0.02, 0.25, 0.75, 1.0};    // bg, csf, gm, wm
  const double flair_mean[4] = {0.01, 0.12, 0.36, 0.48};

  auto make_volume = [&](float fill) {
    Volume3D v(dims[0], dims[1], dims[2], fill);
    v.spacing = sp;
    v.affine = Volume3D::identity_affine();
    for (int i = 0; i < 3; ++i) {
      v.affine[i][i] = sp[i];
      v.affine[i][3] = -sp[i] * (dims[i] - 1) / 2.0;
    }
    return v;
  };

  PhantomSample sample;
  sample.t1 = make_volume(0.0f);
  sample.flair = make_volume(0.0f);
  sample.lacune_mask = make_volume(0.0f);
  sample.region_atlas = make_volume(0.0f);
  sample.masks.brain = make_volume(0.0f);
  sample.masks.csf = make_volume(0.0f);

  for (size_t i = 0; i < n; ++i) {
    sample.t1.data[i] = static_cast<float>(t1_mean[tissue[i]]);
    sample.flair.data[i] = static_cast<float>(flair_mean[tissue[i]]);
    sample.region_atlas.data[i] = static_cast<float>(tissue[i] == kBackground ? 0 : atlas[i]);
    sample.masks.brain.data[i] = tissue[i] == kBackground ? 0.0f : 1.0f;
    sample.masks.csf.data[i] = tissue[i] == kCsf ? 1.0f : 0.0f;
  }

  auto paint = [&](const std::vector<Lesion>& lesions, bool mark_mask) {
    for (const auto& l : lesions)
      for (size_t v : l.voxels) {
        double f_flair = 0.2 * l.fill;  // incomplete FLAIR suppression
        sample.t1.data[v] = static_cast<float>(t1_mean[kWm] * (1 - l.fill) + t1_mean[kCsf] * l.fill);
        sample.flair.data[v] = static_cast<float>(flair_mean[kWm] * (1 - f_flair) + flair_mean[kCsf] * f_flair);
        if (mark_mask) sample.lacune_mask.data[v] = 1.0f;
      }
  };
  paint(lacunes, true);
  paint(mimics, false);

  // Multiplicative bias (independent linear direction per modality) and
  // additive noise scaled by the WM-CSF contrast.
  for (Volume3D* vol : {&sample.t1, &sample.flair}) {
    double dir[3];
    double norm = 0;
    for (double& v : dir) {
      v = rng.gaussian();
      norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& v : dir) v /= norm;
    const double contrast = (vol == &sample.t1) ? t1_mean[kWm] - t1_mean[kCsf]
                                                : flair_mean[kWm] - flair_mean[kCsf];
    size_t idx = 0;
    for (int z = 0; z < dims[2]; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x, ++idx) {
          double hx = dims[0] > 1 ? 2.0 * x / (dims[0] - 1) - 1.0 : 0.0;
          double hy = dims[1] > 1 ? 2.0 * y / (dims[1] - 1) - 1.0 : 0.0;
          double hz = dims[2] > 1 ? 2.0 * z / (dims[2] - 1) - 1.0 : 0.0;
          double field = std::exp(cfg.bias_amplitude * (dir[0] * hx + dir[1] * hy + dir[2] * hz));
          double noisy = vol->data[idx] * field + cfg.noise_sigma * contrast * rng.gaussian();
          vol->data[idx] = static_cast<float>(std::max(noisy, 1e-3));
        }
  }

  sample.true_count = lacune_count;
  sample.true_category = burden_from_count(lacune_count);
  return sample;
}

}  // namespace lacuna
