#include "lacuna/unet.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace lacuna::nn {

Tensor& ParamSet::find(const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw Error(ErrorCode::ConfigError, "no parameter named " + name);
}

void ParamSet::zero_grad() {
  for (auto& t : tensors) std::fill(t.grad().begin(), t.grad().end(), 0.0f);
}

size_t ParamSet::total_values() const {
  size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

namespace {

Tensor he_conv(int out_c, int in_c, int k, Rng& rng) {
  Tensor t = Tensor::zeros({out_c, in_c, k, k, k});
  double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k * k));
  for (auto& v : t.values()) v = static_cast<float>(std * rng.gaussian());
  return t;
}

}  // namespace

ParamSet unet_init(const UNetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet p;
  auto conv_pair = [&](const std::string& name, int in_c, int out_c) {
    p.add(name + "_w", he_conv(out_c, in_c, 3, rng));
    p.add(name + "_b", Tensor::zeros({out_c}));
  };

  for (int l = 0; l < cfg.depth - 1; ++l) {
    int in_c = l == 0 ? cfg.in_channels : cfg.level_channels(l - 1);
    conv_pair("enc" + std::to_string(l) + "_conv0", in_c, cfg.level_channels(l));
    conv_pair("enc" + std::to_string(l) + "_conv1", cfg.level_channels(l), cfg.level_channels(l));
  }
  int bot_c = cfg.level_channels(cfg.depth - 1);
  conv_pair("bot_conv0", cfg.level_channels(cfg.depth - 2), bot_c);
  conv_pair("bot_conv1", bot_c, bot_c);
  for (int l = cfg.depth - 2; l >= 0; --l) {
    int up_c = cfg.level_channels(l + 1);
    conv_pair("dec" + std::to_string(l) + "_conv0", up_c + cfg.level_channels(l), cfg.level_channels(l));
    conv_pair("dec" + std::to_string(l) + "_conv1", cfg.level_channels(l), cfg.level_channels(l));
  }
  p.add("head_w", he_conv(1, cfg.base_channels, 1, rng));
  p.add("head_b", Tensor::zeros({1}));
  if (cfg.classifier_head) {
    Tensor w = Tensor::zeros({3, bot_c});
    double std = std::sqrt(2.0 / bot_c);
    for (auto& v : w.values()) v = static_cast<float>(std * rng.gaussian());
    p.add("cls_w", w);
    p.add("cls_b", Tensor::zeros({3}));
  }
  return p;
}

UNetOutput unet_forward(const UNetConfig& cfg, ParamSet& params, const Tensor& input) {
  cfg.validate();
  if (input.shape().size() != 4 || input.channels() != cfg.in_channels)
    throw Error(ErrorCode::ShapeMismatch, "unet input channel mismatch");
  int div = 1 << (cfg.depth - 1);
  if (input.nx() % div || input.ny() % div || input.nz() % div)
    throw Error(ErrorCode::ShapeMismatch,
                "unet input spatial dims must be divisible by 2^(depth-1)");

  auto block = [&](const Tensor& x, const std::string& name) {
    return relu(conv3(x, params.find(name + "_w"), params.find(name + "_b")));
  };

  std::vector<Tensor> skips;
  Tensor x = input;
  for (int l = 0; l < cfg.depth - 1; ++l) {
    std::string e = "enc" + std::to_string(l);
    x = block(block(x, e + "_conv0"), e + "_conv1");
    skips.push_back(x);
    x = maxpool2(x);
  }
  Tensor bottleneck = block(block(x, "bot_conv0"), "bot_conv1");
  x = bottleneck;
  for (int l = cfg.depth - 2; l >= 0; --l) {
    std::string d = "dec" + std::to_string(l);
    x = concat(upsample2(x), skips[static_cast<size_t>(l)]);
    x = block(block(x, d + "_conv0"), d + "_conv1");
  }

  UNetOutput out;
  out.dense = sigmoid(conv3(x, params.find("head_w"), params.find("head_b")));
  if (cfg.classifier_head)
    out.class_logits = affine_map(global_avg_pool(bottleneck), params.find("cls_w"), params.find("cls_b"));
  return out;
}

void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.tensors.size());
    state.v.resize(params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
      state.m[i].assign(params.tensors[i].size(), 0.0f);
      state.v[i].assign(params.tensors[i].size(), 0.0f);
    }
  }
  state.step++;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    auto& t = params.tensors[i];
    if (state.m[i].size() != t.size())
      throw Error(ErrorCode::ShapeMismatch, "adam state shape mismatch");
    for (size_t j = 0; j < t.size(); ++j) {
      double g = t.grad()[j];
      double m = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g * g;
      state.m[i][j] = static_cast<float>(m);
      state.v[i][j] = static_cast<float>(v);
      double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      t.values()[j] = static_cast<float>(t.values()[j] - update);
    }
  }
}

void save_checkpoint(const ParamSet& params, long step, const std::string& prefix) {
  nlohmann::json manifest;
  manifest["step"] = step;
  manifest["tensors"] = nlohmann::json::array();
  for (size_t i = 0; i < params.names.size(); ++i)
    manifest["tensors"].push_back({{"name", params.names[i]}, {"shape", params.tensors[i].shape()}});

  std::ofstream mf(prefix + ".json", std::ios::trunc);
  if (!mf) throw Error(ErrorCode::IoError, "cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bf) throw Error(ErrorCode::IoError, "cannot write " + prefix + ".bin");
  for (const auto& t : params.tensors)
    bf.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!bf) throw Error(ErrorCode::IoError, "short write to " + prefix + ".bin");
}

long load_checkpoint(ParamSet& params, const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw Error(ErrorCode::IoError, "cannot read " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(mf);

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.tensors.size())
    throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor count mismatch");

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw Error(ErrorCode::IoError, "cannot read " + prefix + ".bin");
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != params.names[i] ||
        tensors[i].at("shape").get<std::vector<int>>() != params.tensors[i].shape())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint does not match parameter layout");
    bf.read(reinterpret_cast<char*>(params.tensors[i].values().data()),
            static_cast<std::streamsize>(params.tensors[i].size() * sizeof(float)));
  }
  if (!bf) throw Error(ErrorCode::IoError, "checkpoint payload truncated");
  return manifest.at("step").get<long>();
}

namespace {

size_t patch_index(const Patch& p, int c, int x, int y, int z) {
  return ((static_cast<size_t>(c) * p.dims[2] + z) * p.dims[1] + y) * p.dims[0] + x;
}

void flip_axis(Patch& p, int axis) {
  Patch out = p;
  for (int c = 0; c < p.channels; ++c)
    for (int z = 0; z < p.dims[2]; ++z)
      for (int y = 0; y < p.dims[1]; ++y)
        for (int x = 0; x < p.dims[0]; ++x) {
          int s[3] = {x, y, z};
          s[axis] = p.dims[axis] - 1 - s[axis];
          out.data[patch_index(p, c, x, y, z)] = p.data[patch_index(p, c, s[0], s[1], s[2])];
        }
  p = std::move(out);
}

// 90-degree rotation taking axis a toward axis b.
void rotate90(Patch& p, int a, int b) {
  Patch out = p;
  out.dims[a] = p.dims[b];
  out.dims[b] = p.dims[a];
  out.data.assign(p.data.size(), 0.0f);
  for (int c = 0; c < p.channels; ++c)
    for (int z = 0; z < out.dims[2]; ++z)
      for (int y = 0; y < out.dims[1]; ++y)
        for (int x = 0; x < out.dims[0]; ++x) {
          int d[3] = {x, y, z};
          int s[3] = {d[0], d[1], d[2]};
          s[a] = d[b];
          s[b] = p.dims[b] - 1 - d[a];
          out.data[patch_index(out, c, x, y, z)] = p.data[patch_index(p, c, s[0], s[1], s[2])];
        }
  p = std::move(out);
}

}  // namespace

void augment(Patch& channels, Patch& labels, const std::vector<bool>& is_image, Rng& rng) {
  if (channels.dims != labels.dims)
    throw Error(ErrorCode::ShapeMismatch, "channel/label patch dims mismatch");
  if (is_image.size() != static_cast<size_t>(channels.channels))
    throw Error(ErrorCode::ShapeMismatch, "is_image size must match channel count");

  bool flips[3];
  for (bool& f : flips) f = rng.bernoulli(0.5);
  int pair = static_cast<int>(rng.uniform_int(0, 2));  // 0:(x,y) 1:(x,z) 2:(y,z)
  int k = static_cast<int>(rng.uniform_int(0, 3));
  double a = rng.uniform(0.9, 1.1);
  double b = rng.uniform(-0.1, 0.1);

  const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (Patch* p : {&channels, &labels}) {
    for (int axis = 0; axis < 3; ++axis)
      if (flips[axis]) flip_axis(*p, axis);
    for (int i = 0; i < k; ++i) rotate90(*p, axes[pair][0], axes[pair][1]);
  }
  size_t sp = channels.spatial_size();
  for (int c = 0; c < channels.channels; ++c) {
    if (!is_image[static_cast<size_t>(c)]) continue;
    for (size_t i = 0; i < sp; ++i) {
      float& v = channels.data[static_cast<size_t>(c) * sp + i];
      v = static_cast<float>(a * v + b);
    }
  }
}

}  // namespace lacuna::nn
