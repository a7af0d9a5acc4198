#include "lacuna/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lacuna {

using nn::Tensor;

LocationPrior build_location_prior(const LabelVolume& atlas,
                                   const std::vector<const Volume3D*>& annotations) {
  atlas.validate();
  std::set<int> regions;
  for (float v : atlas.data)
    if (v != 0.0f) regions.insert(static_cast<int>(v));
  const double r_count = static_cast<double>(regions.size());
  if (regions.empty()) throw Error(ErrorCode::ConfigError, "atlas has no regions");

  std::map<int, long> counts;
  for (int r : regions) counts[r] = 0;
  long total = 0;
  for (const Volume3D* ann : annotations) {
    require_same_grid(atlas, *ann);
    ComponentSet comps = connected_components(*ann, 26);
    for (const auto& c : comps.components) {
      // voxel-space centroid, rounded, looked up in the atlas
      double acc[3] = {0, 0, 0};
      for (size_t idx : c.voxels) {
        size_t rem = idx;
        acc[0] += static_cast<double>(rem % atlas.dims[0]);
        rem /= atlas.dims[0];
        acc[1] += static_cast<double>(rem % atlas.dims[1]);
        acc[2] += static_cast<double>(rem / atlas.dims[1]);
      }
      int vx = static_cast<int>(std::lround(acc[0] / static_cast<double>(c.voxel_count)));
      int vy = static_cast<int>(std::lround(acc[1] / static_cast<double>(c.voxel_count)));
      int vz = static_cast<int>(std::lround(acc[2] / static_cast<double>(c.voxel_count)));
      int region = static_cast<int>(atlas.at(vx, vy, vz));
      total++;
      if (counts.count(region)) counts[region]++;
    }
  }

  LocationPrior prior;
  for (int r : regions)
    prior.region_prior[r] =
        (static_cast<double>(counts[r]) + 1.0) / (static_cast<double>(total) + r_count);
  prior.channel = atlas;
  for (size_t i = 0; i < atlas.data.size(); ++i) {
    int r = static_cast<int>(atlas.data[i]);
    prior.channel.data[i] = r == 0 ? 0.0f : static_cast<float>(prior.region_prior.at(r));
  }
  return prior;
}

PreparedScan prepare_scan(const PhantomSample& sample, const PreprocessConfig& cfg) {
  PreparedScan scan;
  scan.lacune_mask = sample.lacune_mask;
  scan.brain_mask = sample.masks.brain;
  scan.true_count = sample.true_count;
  scan.true_category = sample.true_category;

  auto [t1c, t1_field] = bias_field_correct(sample.t1, sample.masks.brain, cfg.bias_order);
  auto [flairc, flair_field] = bias_field_correct(sample.flair, sample.masks.brain, cfg.bias_order);
  Volume3D diff = difference_map(t1c, flairc, sample.masks);
  scan.stage1_channels.push_back(normalize_scanwise(t1c, sample.masks.brain));
  scan.stage1_channels.push_back(normalize_scanwise(flairc, sample.masks.brain));
  scan.stage1_channels.push_back(std::move(diff));
  return scan;
}

std::vector<const Volume3D*> stage1_channels(const PreparedScan& scan) {
  return {&scan.stage1_channels[0], &scan.stage1_channels[1], &scan.stage1_channels[2]};
}

std::vector<const Volume3D*> stage2_channels(const PreparedScan& scan) {
  if (scan.stage1_prob.data.empty())
    throw Error(ErrorCode::ConfigError, "stage-1 probability map not computed");
  if (scan.prior_channel.data.empty())
    throw Error(ErrorCode::ConfigError, "prior channel not set");
  return {&scan.stage1_prob, &scan.stage1_channels[0], &scan.stage1_channels[1],
          &scan.prior_channel};
}

namespace {

// Copies a patch-sized window starting at `start` (may be negative: zero pad).
void copy_window(const Volume3D& vol, const int start[3], int patch, float* dst) {
  for (int z = 0; z < patch; ++z)
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) {
        int sx = start[0] + x, sy = start[1] + y, sz = start[2] + z;
        *dst++ = vol.in_bounds(sx, sy, sz) ? vol.at(sx, sy, sz) : 0.0f;
      }
}

std::vector<int> window_starts(int dim, int patch) {
  if (dim <= patch) return {(dim - patch) / 2};
  int stride = std::max(1, patch / 2);
  std::vector<int> starts;
  for (int s = 0; s + patch < dim; s += stride) starts.push_back(s);
  starts.push_back(dim - patch);
  return starts;
}

std::vector<bool> image_channel_mask(int stage) {
  if (stage == 1) return {true, true, false};   // T1w, FLAIR, difference
  return {false, true, true, false};            // prob, T1w, FLAIR, prior
}

}  // namespace

std::vector<PatchPair> sample_patches(const PreparedScan& scan, int stage, Rng& rng, int n,
                                      int patch_size, double pos_fraction) {
  const auto& dims = scan.lacune_mask.dims;
  for (int d : dims)
    if (patch_size > d) throw Error(ErrorCode::PatchTooLarge, "patch exceeds volume extent");

  auto channels = stage == 1 ? stage1_channels(scan) : stage2_channels(scan);

  std::vector<size_t> lacune_voxels, brain_voxels;
  for (size_t i = 0; i < scan.lacune_mask.data.size(); ++i)
    if (scan.lacune_mask.data[i] != 0.0f) lacune_voxels.push_back(i);
  for (size_t i = 0; i < scan.brain_mask.data.size(); ++i)
    if (scan.brain_mask.data[i] != 0.0f) brain_voxels.push_back(i);
  if (brain_voxels.empty()) throw Error(ErrorCode::EmptyMask, "brain mask is empty");

  auto unravel = [&](size_t idx, int* c) {
    c[0] = static_cast<int>(idx % dims[0]);
    idx /= dims[0];
    c[1] = static_cast<int>(idx % dims[1]);
    c[2] = static_cast<int>(idx / dims[1]);
  };

  std::vector<PatchPair> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int center[3];
    if (!lacune_voxels.empty() && rng.uniform() < pos_fraction) {
      size_t v = lacune_voxels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(lacune_voxels.size()) - 1))];
      unravel(v, center);
      for (int a = 0; a < 3; ++a)
        center[a] = std::clamp(center[a] + static_cast<int>(rng.uniform_int(-4, 4)), 0, dims[a] - 1);
    } else {
      size_t v = brain_voxels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(brain_voxels.size()) - 1))];
      unravel(v, center);
    }
    int start[3];
    for (int a = 0; a < 3; ++a)
      start[a] = std::clamp(center[a] - patch_size / 2, 0, dims[a] - patch_size);

    PatchPair pair;
    pair.channels.channels = static_cast<int>(channels.size());
    pair.channels.dims = {patch_size, patch_size, patch_size};
    pair.channels.data.resize(channels.size() * pair.channels.spatial_size());
    for (size_t c = 0; c < channels.size(); ++c)
      copy_window(*channels[c], start, patch_size,
                  pair.channels.data.data() + c * pair.channels.spatial_size());
    pair.labels.channels = 1;
    pair.labels.dims = pair.channels.dims;
    pair.labels.data.resize(pair.labels.spatial_size());
    copy_window(scan.lacune_mask, start, patch_size, pair.labels.data.data());
    out.push_back(std::move(pair));
  }
  return out;
}

TrainResult train_stage(int stage, std::vector<PreparedScan>& cohort, const TrainRun& run) {
  if (stage != 1 && stage != 2) throw Error(ErrorCode::ConfigError, "stage must be 1 or 2");
  if (cohort.empty()) throw Error(ErrorCode::ConfigError, "empty training cohort");
  run.loss.validate();

  TrainResult result;
  result.unet.depth = run.unet_depth;
  result.unet.base_channels = run.unet_base_channels;
  result.unet.in_channels = stage == 1 ? 3 : 4;
  result.unet.classifier_head = stage == 2;

  Rng rng(run.seed);
  result.params = unet_init(result.unet, rng);
  nn::AdamState adam;

  const auto is_image = image_channel_mask(stage);
  result.patch_size = run.patch_for(stage);
  // Stage 2 alternates two step kinds when a smaller seg patch is configured:
  // balanced small-patch steps train the dense path (positive-centered
  // sampling only balances voxel classes when patch < volume), full-size
  // joint steps train the burden head with the whole-volume category (at
  // full size the patch mask is the scan mask, so the joint loss's derived
  // category is the scan-level label).
  const int seg_ps = run.patch_for(1);
  const bool mixed = stage == 2 && seg_ps != run.patch_size;

  const int n_epochs = run.epochs_for(stage);
  for (int epoch = 0; epoch < n_epochs; ++epoch) {
    double epoch_acc = 0.0;
    for (int it = 0; it < run.patches_per_epoch; ++it) {
      auto& scan = cohort[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cohort.size()) - 1))];
      const bool seg_step = stage == 1 || (mixed && it % 2 == 0);
      const int ps = seg_step ? seg_ps : run.patch_size;
      auto pairs = sample_patches(scan, stage, rng, 1, ps, run.pos_fraction);
      auto& pair = pairs[0];
      if (run.augment) nn::augment(pair.channels, pair.labels, is_image, rng);

      Tensor input = Tensor::from_values({pair.channels.channels, ps, ps, ps},
                                         pair.channels.data);
      auto out = unet_forward(result.unet, result.params, input);

      Tensor loss;
      if (stage == 1) {
        if (run.stage1_loss == "voxel_ratio")
          loss = voxel_ratio_bce(out.dense, pair.labels.data, run.loss);
        else if (run.stage1_loss == "fnw")
          loss = fnw_bce(out.dense, pair.labels.data, run.loss);
        else
          throw Error(ErrorCode::ConfigError, "unknown stage1_loss " + run.stage1_loss);
      } else if (seg_step) {
        loss = fnw_bce(out.dense, pair.labels.data, run.loss);
      } else {
        loss = joint_loss(out.dense, pair.labels.data, {ps, ps, ps}, *out.class_logits, run.loss);
      }

      double value = loss.values()[0];
      if (!std::isfinite(value))
        throw Error(ErrorCode::DivergedLoss,
                    "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(it));
      epoch_acc += value;

      result.params.zero_grad();
      nn::backward(loss);
      if (run.adam.lr != 0.0) nn::adam_step(result.params, adam, run.adam);
    }
    result.epoch_loss.push_back(epoch_acc / std::max(1, run.patches_per_epoch));
  }
  return result;
}

Volume3D infer_dense(const nn::UNetConfig& cfg, nn::ParamSet& params,
                     const std::vector<const Volume3D*>& channels, int patch_size) {
  if (channels.empty() || static_cast<int>(channels.size()) != cfg.in_channels)
    throw Error(ErrorCode::ShapeMismatch, "channel count does not match network");
  for (size_t c = 1; c < channels.size(); ++c) require_same_grid(*channels[0], *channels[c]);

  const Volume3D& ref = *channels[0];
  std::vector<double> sum(ref.size(), 0.0);
  std::vector<int> count(ref.size(), 0);

  const auto sx = window_starts(ref.dims[0], patch_size);
  const auto sy = window_starts(ref.dims[1], patch_size);
  const auto sz = window_starts(ref.dims[2], patch_size);
  const size_t sp = static_cast<size_t>(patch_size) * patch_size * patch_size;
  std::vector<float> buf(channels.size() * sp);

  for (int z0 : sz)
    for (int y0 : sy)
      for (int x0 : sx) {
        int start[3] = {x0, y0, z0};
        for (size_t c = 0; c < channels.size(); ++c)
          copy_window(*channels[c], start, patch_size, buf.data() + c * sp);
        Tensor input = Tensor::from_values({cfg.in_channels, patch_size, patch_size, patch_size}, buf);
        auto out = unet_forward(cfg, params, input);
        const auto& prob = out.dense.values();
        size_t i = 0;
        for (int z = 0; z < patch_size; ++z)
          for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x, ++i) {
              int vx = x0 + x, vy = y0 + y, vz = z0 + z;
              if (!ref.in_bounds(vx, vy, vz)) continue;
              size_t idx = ref.index(vx, vy, vz);
              sum[idx] += prob[i];
              count[idx]++;
            }
      }

  Volume3D out = ref;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = count[i] > 0 ? static_cast<float>(sum[i] / count[i]) : 0.0f;
  return out;
}

InferenceResult infer_volume(TrainResult& stage1, TrainResult& stage2, PreparedScan& scan) {
  InferenceResult result;
  auto& p2 = stage2.params;
  const int patch_size = stage2.patch_size;

  scan.stage1_prob =
      infer_dense(stage1.unet, stage1.params, stage1_channels(scan), stage1.patch_size);
  result.stage1_prob = scan.stage1_prob;

  auto channels = stage2_channels(scan);
  const Volume3D& ref = *channels[0];
  std::vector<double> sum(ref.size(), 0.0);
  std::vector<int> count(ref.size(), 0);
  double class_acc[3] = {0, 0, 0};
  long windows = 0;

  const auto sx = window_starts(ref.dims[0], patch_size);
  const auto sy = window_starts(ref.dims[1], patch_size);
  const auto sz = window_starts(ref.dims[2], patch_size);
  const size_t sp = static_cast<size_t>(patch_size) * patch_size * patch_size;
  std::vector<float> buf(channels.size() * sp);

  for (int z0 : sz)
    for (int y0 : sy)
      for (int x0 : sx) {
        int start[3] = {x0, y0, z0};
        for (size_t c = 0; c < channels.size(); ++c)
          copy_window(*channels[c], start, patch_size, buf.data() + c * sp);
        Tensor input = Tensor::from_values({stage2.unet.in_channels, patch_size, patch_size, patch_size}, buf);
        auto out = unet_forward(stage2.unet, p2, input);
        Tensor probs = nn::softmax3(*out.class_logits);
        for (int i = 0; i < 3; ++i) class_acc[i] += probs.values()[i];
        windows++;

        const auto& prob = out.dense.values();
        size_t i = 0;
        for (int z = 0; z < patch_size; ++z)
          for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x, ++i) {
              int vx = x0 + x, vy = y0 + y, vz = z0 + z;
              if (!ref.in_bounds(vx, vy, vz)) continue;
              size_t idx = ref.index(vx, vy, vz);
              sum[idx] += prob[i];
              count[idx]++;
            }
      }

  result.prob = ref;
  for (size_t i = 0; i < result.prob.data.size(); ++i)
    result.prob.data[i] = count[i] > 0 ? static_cast<float>(sum[i] / count[i]) : 0.0f;

  for (int i = 0; i < 3; ++i) result.class_probs[i] = class_acc[i] / static_cast<double>(windows);
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (result.class_probs[i] > result.class_probs[best]) best = i;  // ties stay lower
  result.burden = static_cast<BurdenCategory>(best);
  return result;
}

std::pair<Volume3D, ComponentSet> postprocess(const Volume3D& prob, const PostprocessConfig& cfg) {
  Volume3D mask = prob;
  for (auto& v : mask.data) v = v > cfg.threshold ? 1.0f : 0.0f;
  ComponentSet all = connected_components(mask, cfg.connectivity);
  for (const auto& c : all.components)
    if (c.voxel_count < cfg.min_component_voxels)
      for (size_t idx : c.voxels) mask.data[idx] = 0.0f;
  ComponentSet kept = connected_components(mask, cfg.connectivity);
  return {std::move(mask), std::move(kept)};
}

CrossvalResult run_crossval(const std::vector<PreparedScan>& cohort, const LabelVolume& atlas,
                            const CrossvalConfig& cfg) {
  if (cohort.empty()) throw Error(ErrorCode::ConfigError, "empty crossval cohort");

  std::vector<std::pair<std::string, BurdenCategory>> items;
  for (const auto& scan : cohort) items.push_back({scan.id, scan.true_category});
  std::vector<int> folds = stratified_kfold(items, cfg.k, cfg.seed);

  CrossvalResult result;
  result.scans.resize(cohort.size());
  std::vector<std::pair<BurdenCategory, BurdenCategory>> confusion_pairs(cohort.size());

  for (int f = 0; f < cfg.k; ++f) {
    std::vector<PreparedScan> trains;
    std::vector<size_t> test_indices;
    for (size_t i = 0; i < cohort.size(); ++i) {
      if (folds[i] == f)
        test_indices.push_back(i);
      else
        trains.push_back(cohort[i]);
    }
    if (trains.empty() || test_indices.empty())
      throw Error(ErrorCode::ConfigError, "fold " + std::to_string(f) + " has an empty side");

    std::vector<const Volume3D*> annotations;
    for (const auto& s : trains) annotations.push_back(&s.lacune_mask);
    LocationPrior prior = build_location_prior(atlas, annotations);

    TrainRun run = cfg.train;
    run.seed = Rng::split(cfg.seed, 1000 + static_cast<uint64_t>(f));

    TrainResult s1 = train_stage(1, trains, run);
    for (auto& s : trains) {
      s.prior_channel = prior.channel;
      s.stage1_prob = infer_dense(s1.unet, s1.params, stage1_channels(s), s1.patch_size);
    }
    TrainResult s2 = train_stage(2, trains, run);

    for (size_t i : test_indices) {
      PreparedScan scan = cohort[i];
      scan.prior_channel = prior.channel;
      InferenceResult inference = infer_volume(s1, s2, scan);
      auto [mask, pred_comps] = postprocess(inference.prob, cfg.post);
      ComponentSet gt_comps = connected_components(scan.lacune_mask, cfg.post.connectivity);
      SensitivityResult sens = instance_sensitivity(pred_comps, gt_comps);

      ScanOutcome& o = result.scans[i];
      o.id = scan.id;
      o.fold = f;
      o.detected = sens.detected;
      o.total = sens.total;
      o.fp_count = sens.fp_count;
      o.sensitivity = sens.sensitivity;
      o.true_category = scan.true_category;
      o.predicted_category = inference.burden;
      confusion_pairs[i] = {o.true_category, o.predicted_category};
    }
  }

  // aggregate in cohort order for determinism
  double acc = 0.0;
  long n = 0;
  std::vector<double> fold_acc(static_cast<size_t>(cfg.k), 0.0);
  std::vector<long> fold_n(static_cast<size_t>(cfg.k), 0);
  for (const auto& o : result.scans)
    if (o.sensitivity) {
      acc += *o.sensitivity;
      n++;
      fold_acc[static_cast<size_t>(o.fold)] += *o.sensitivity;
      fold_n[static_cast<size_t>(o.fold)]++;
    }
  result.sensitivity_mean = n > 0 ? acc / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (const auto& o : result.scans)
    if (o.sensitivity) ss += (*o.sensitivity - result.sensitivity_mean) *
                             (*o.sensitivity - result.sensitivity_mean);
  result.sensitivity_sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  for (int f = 0; f < cfg.k; ++f)
    result.fold_mean_sensitivity.push_back(
        fold_n[static_cast<size_t>(f)] > 0
            ? fold_acc[static_cast<size_t>(f)] / static_cast<double>(fold_n[static_cast<size_t>(f)])
            : std::nan(""));

  result.confusion = confusion_matrix(confusion_pairs);
  result.bca_value = bca(result.confusion);
  result.accuracy = confusion_accuracy(result.confusion);
  return result;
}

}  // namespace lacuna
