#ifndef LACUNA_PIPELINE_HPP
#define LACUNA_PIPELINE_HPP

#include <map>
#include <string>
#include <vector>

#include "lacuna/eval.hpp"
#include "lacuna/losses.hpp"
#include "lacuna/phantom.hpp"
#include "lacuna/unet.hpp"

namespace lacuna {

/// Per-region lacune occurrence prior learned from training annotations.
struct LocationPrior {
  std::map<int, double> region_prior;  // region label -> prior in [0,1]
  Volume3D channel;                    // prior rendered over the atlas grid
};

/// Laplace-smoothed (alpha=1) fraction of lacune components whose centroid
/// falls in each atlas region.
LocationPrior build_location_prior(const LabelVolume& atlas,
                                   const std::vector<const Volume3D*>& annotations);

/// A scan after preprocessing, ready for patch sampling and inference.
struct PreparedScan {
  std::string id;
  std::vector<Volume3D> stage1_channels;  // [T1w, FLAIR, difference map], normalized
  Volume3D lacune_mask;
  Volume3D brain_mask;
  Volume3D prior_channel;  // set once the fold's prior is built
  Volume3D stage1_prob;    // set by stage-1 inference before stage-2 use
  int true_count = 0;
  BurdenCategory true_category = BurdenCategory::C0;
};

struct PreprocessConfig {
  int bias_order = 2;
};

/// Bias correction, scan-wise normalization and the T1w-FLAIR difference map.
PreparedScan prepare_scan(const PhantomSample& sample, const PreprocessConfig& cfg);

/// The 4 stage-2 input channels: [stage-1 probability, T1w, FLAIR, prior].
std::vector<const Volume3D*> stage2_channels(const PreparedScan& scan);
std::vector<const Volume3D*> stage1_channels(const PreparedScan& scan);

struct PatchPair {
  nn::Patch channels;
  nn::Patch labels;  // single channel, lacune mask
};

/// pos_fraction of patches centered within 4 voxels of a random lacune voxel
/// (when any exist); the rest uniform within the brain mask.
std::vector<PatchPair> sample_patches(const PreparedScan& scan, int stage, Rng& rng, int n,
                                      int patch_size, double pos_fraction = 0.5);

struct TrainRun {
  uint64_t seed = 0;
  int patch_size = 32;
  int stage1_patch_size = 0;  // 0: use patch_size. Stage 1 benefits from
                              // smaller patches (positive-centered sampling
                              // only balances classes when patch < volume);
                              // stage 2's burden labels need whole-volume
                              // patches to match the scan-level category.
  int patches_per_epoch = 32;
  int epochs = 8;
  int stage1_epochs = 0;  // 0: use epochs. Stage 1 converges in far fewer
                          // steps than the burden head needs; a separate
                          // budget keeps the loss comparison away from the
                          // ceiling where every variant saturates.
  double pos_fraction = 0.5;
  bool augment = true;
  nn::AdamConfig adam;
  LossConfig loss;
  std::string stage1_loss = "fnw";  // "fnw" | "voxel_ratio"
  int unet_depth = 3;
  int unet_base_channels = 8;

  int patch_for(int stage) const {
    return stage == 1 && stage1_patch_size > 0 ? stage1_patch_size : patch_size;
  }
  int epochs_for(int stage) const {
    return stage == 1 && stage1_epochs > 0 ? stage1_epochs : epochs;
  }
};

struct TrainResult {
  nn::UNetConfig unet;
  nn::ParamSet params;
  int patch_size = 32;  // window size this stage was trained with
  std::vector<double> epoch_loss;
};

/// Stage 1: dense detection, FNw-BCE (or the voxel-ratio baseline).
/// Stage 2: refinement + burden, joint loss; requires stage1_prob and
/// prior_channel on every cohort scan.
TrainResult train_stage(int stage, std::vector<PreparedScan>& cohort, const TrainRun& run);

/// Sliding-window (stride patch/2) average probability map; volumes smaller
/// than a patch use a single centered zero-padded window.
Volume3D infer_dense(const nn::UNetConfig& cfg, nn::ParamSet& params,
                     const std::vector<const Volume3D*>& channels, int patch_size);

struct InferenceResult {
  Volume3D prob;                       // stage-2 probability map
  Volume3D stage1_prob;
  std::array<double, 3> class_probs{};  // mean of per-window softmax
  BurdenCategory burden = BurdenCategory::C0;  // argmax, ties toward lower
};

/// Full two-stage inference; each stage slides windows of its own
/// patch_size. Fills scan.stage1_prob as a side effect.
InferenceResult infer_volume(TrainResult& stage1, TrainResult& stage2, PreparedScan& scan);

struct PostprocessConfig {
  double threshold = 0.5;
  size_t min_component_voxels = 5;
  int connectivity = 26;
};

/// Thresholds the probability map and drops small components.
std::pair<Volume3D, ComponentSet> postprocess(const Volume3D& prob, const PostprocessConfig& cfg);

struct CrossvalConfig {
  int k = 5;
  uint64_t seed = 0;
  TrainRun train;
  PostprocessConfig post;
};

struct ScanOutcome {
  std::string id;
  int fold = 0;
  size_t detected = 0;
  size_t total = 0;
  size_t fp_count = 0;
  std::optional<double> sensitivity;  // absent for lacune-free scans
  BurdenCategory true_category = BurdenCategory::C0;
  BurdenCategory predicted_category = BurdenCategory::C0;
};

struct CrossvalResult {
  std::vector<ScanOutcome> scans;             // cohort order
  std::vector<double> fold_mean_sensitivity;  // NaN for folds with no eligible scan
  double sensitivity_mean = 0.0;              // macro over scans with lacunes
  double sensitivity_sd = 0.0;                // sample sd
  Confusion3 confusion{};
  double bca_value = 0.0;
  double accuracy = 0.0;
};

/// Stratified k-fold loop: per fold, trains both stages on the in-fold scans
/// (prior built from their annotations only) and evaluates the held-out
/// scans. Fold seeds derive from cfg.seed, so two configs differing only in
/// the loss variant see identical folds, phantom data, and initializations.
CrossvalResult run_crossval(const std::vector<PreparedScan>& cohort, const LabelVolume& atlas,
                            const CrossvalConfig& cfg);

}  // namespace lacuna

#endif
