#ifndef LACUNA_UNET_HPP
#define LACUNA_UNET_HPP

#include <map>
#include <optional>
#include <string>

#include "lacuna/tensor.hpp"

namespace lacuna::nn {

struct UNetConfig {
  int depth = 3;          // encoder/decoder resolution levels
  int base_channels = 8;
  int in_channels = 3;
  bool classifier_head = false;  // 3-class burden head off the bottleneck

  void validate() const {
    if (depth < 2) throw Error(ErrorCode::ConfigError, "unet depth must be >= 2");
    if (base_channels < 1 || in_channels < 1)
      throw Error(ErrorCode::ConfigError, "unet channels must be >= 1");
  }
  int level_channels(int level) const { return base_channels << level; }
};

/// Named parameter tensors, ordered for deterministic iteration.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  Tensor& add(const std::string& name, Tensor t) {
    names.push_back(name);
    tensors.push_back(std::move(t));
    return tensors.back();
  }
  Tensor& find(const std::string& name);
  void zero_grad();
  size_t total_values() const;
};

/// He-normal initialization of all U-Net parameters.
ParamSet unet_init(const UNetConfig& cfg, Rng& rng);

struct UNetOutput {
  Tensor dense;                        // {1, x, y, z}, sigmoid probabilities
  std::optional<Tensor> class_logits;  // {3} when classifier_head
};

/// Spatial dims of the input must be divisible by 2^(depth-1).
UNetOutput unet_forward(const UNetConfig& cfg, ParamSet& params, const Tensor& input);

// --- optimizer ---

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<float>> m, v;
  long step = 0;
};

/// Bias-corrected Adam update from the tensors' accumulated grads.
void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg);

// --- checkpoints ---

/// JSON manifest (shapes, names, step count) + raw little-endian float32
/// payload, as <prefix>.json and <prefix>.bin.
void save_checkpoint(const ParamSet& params, long step, const std::string& prefix);
long load_checkpoint(ParamSet& params, const std::string& prefix);

// --- augmentation ---

/// Raw multi-channel patch for training-time transforms (outside the tape).
struct Patch {
  int channels = 0;
  std::array<int, 3> dims{};
  std::vector<float> data;  // channel-major, x fastest within channel
  size_t spatial_size() const { return static_cast<size_t>(dims[0]) * dims[1] * dims[2]; }
};

/// Random axis flips (p=0.5 each), a k*90-degree rotation in a random axis
/// pair, and an intensity map a*v+b (a in [0.9,1.1], b in [-0.1,0.1]) applied
/// to channels flagged in `is_image` only. Labels get the same geometric
/// transform and no intensity change.
void augment(Patch& channels, Patch& labels, const std::vector<bool>& is_image, Rng& rng);

}  // namespace lacuna::nn

#endif
