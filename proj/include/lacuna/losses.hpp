#ifndef LACUNA_LOSSES_HPP
#define LACUNA_LOSSES_HPP

#include "lacuna/burden.hpp"
#include "lacuna/tensor.hpp"

namespace lacuna {

struct LossConfig {
  double w_fn = 10.0;        // false-negative weight, >= 1
  double lambda_burden = 1.0;
  double p_clip = 1e-7;

  void validate() const {
    if (!(w_fn >= 1.0)) throw Error(ErrorCode::ConfigError, "w_fn must be >= 1");
    if (!(lambda_burden >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda_burden must be >= 0");
    if (!(p_clip > 0.0 && p_clip < 0.5)) throw Error(ErrorCode::ConfigError, "p_clip must be in (0,0.5)");
  }
};

/// Mean over voxels of -[w_fn*y*log p + (1-y)*log(1-p)], p clamped to
/// [p_clip, 1-p_clip]. Returns a scalar tensor on the tape.
nn::Tensor fnw_bce(const nn::Tensor& pred, const std::vector<float>& target, const LossConfig& cfg);

/// fnw_bce with the weight set per sample to N_neg/N_pos (1 when the target
/// has no positives).
nn::Tensor voxel_ratio_bce(const nn::Tensor& pred, const std::vector<float>& target,
                           const LossConfig& cfg);

/// -log softmax3(logits)[true_category].
nn::Tensor burden_ce(const nn::Tensor& class_logits, BurdenCategory true_category);

/// fnw_bce(dense, mask) + lambda_burden * burden_ce(logits, category), where
/// the category is derived from the mask by connected-component counting.
nn::Tensor joint_loss(const nn::Tensor& dense_pred, const std::vector<float>& target_mask,
                      const std::array<int, 3>& mask_dims, const nn::Tensor& class_logits,
                      const LossConfig& cfg);

/// Category of a binary mask: 26-connected component count -> burden.
BurdenCategory category_from_mask(const std::vector<float>& mask, const std::array<int, 3>& dims);

}  // namespace lacuna

#endif
