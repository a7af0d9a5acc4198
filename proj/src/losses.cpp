#include "lacuna/losses.hpp"

#include <cmath>

#include "lacuna/eval.hpp"

namespace lacuna {

using nn::Node;
using nn::Tensor;

namespace {

Tensor weighted_bce(const Tensor& pred, const std::vector<float>& target, double w_pos,
                    double p_clip) {
  if (!pred.defined() || pred.size() != target.size())
    throw Error(ErrorCode::ShapeMismatch, "prediction/target size mismatch");

  const size_t n = pred.size();
  const float lo = static_cast<float>(p_clip);
  const float hi = static_cast<float>(1.0 - p_clip);

  auto out = std::make_shared<Node>();
  out->shape = {1};
  out->val.resize(1);
  out->grad.assign(1, 0.0f);
  out->parents = {pred.node()};

  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double p = std::min(std::max(pred.values()[i], lo), hi);
    double y = target[i];
    acc += -(w_pos * y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  out->val[0] = static_cast<float>(acc / static_cast<double>(n));

  out->backward_fn = [pn = pred.node(), target, w_pos, lo, hi, n](Node& self) {
    const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      double p = std::min(std::max(pn->val[i], lo), hi);  // evaluated at the clamped value
      double y = target[i];
      pn->grad[i] += static_cast<float>(g * (-w_pos * y / p + (1.0 - y) / (1.0 - p)));
    }
  };
  return Tensor(out);
}

}  // namespace

Tensor fnw_bce(const Tensor& pred, const std::vector<float>& target, const LossConfig& cfg) {
  cfg.validate();
  return weighted_bce(pred, target, cfg.w_fn, cfg.p_clip);
}

Tensor voxel_ratio_bce(const Tensor& pred, const std::vector<float>& target,
                       const LossConfig& cfg) {
  cfg.validate();
  size_t pos = 0;
  for (float y : target)
    if (y != 0.0f) pos++;
  double w = pos == 0 ? 1.0
                      : static_cast<double>(target.size() - pos) / static_cast<double>(pos);
  return weighted_bce(pred, target, w, cfg.p_clip);
}

Tensor burden_ce(const Tensor& class_logits, BurdenCategory true_category) {
  if (!class_logits.defined() || class_logits.size() != 3)
    throw Error(ErrorCode::ShapeMismatch, "burden_ce expects 3 logits");

  Tensor probs = nn::softmax3(class_logits);
  const int target = static_cast<int>(true_category);

  auto out = std::make_shared<Node>();
  out->shape = {1};
  out->val.resize(1);
  out->grad.assign(1, 0.0f);
  out->parents = {probs.node()};
  double p = std::max(static_cast<double>(probs.values()[target]), 1e-30);
  out->val[0] = static_cast<float>(-std::log(p));
  out->backward_fn = [pn = probs.node(), target](Node& self) {
    double p = std::max(static_cast<double>(pn->val[target]), 1e-30);
    pn->grad[target] += static_cast<float>(-self.grad[0] / p);
  };
  return Tensor(out);
}

BurdenCategory category_from_mask(const std::vector<float>& mask, const std::array<int, 3>& dims) {
  Volume3D vol(dims[0], dims[1], dims[2]);
  if (vol.size() != mask.size())
    throw Error(ErrorCode::ShapeMismatch, "mask size does not match dims");
  vol.data = mask;
  return burden_from_count(static_cast<long>(connected_components(vol, 26).count()));
}

Tensor joint_loss(const Tensor& dense_pred, const std::vector<float>& target_mask,
                  const std::array<int, 3>& mask_dims, const Tensor& class_logits,
                  const LossConfig& cfg) {
  cfg.validate();
  Tensor seg = fnw_bce(dense_pred, target_mask, cfg);
  BurdenCategory cat = category_from_mask(target_mask, mask_dims);
  return nn::add(seg, nn::scale(burden_ce(class_logits, cat), cfg.lambda_burden));
}

}  // namespace lacuna
