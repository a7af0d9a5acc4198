#include "lacuna/refcheck.hpp"

#include "lacuna/losses.hpp"
#include "lacuna/unet.hpp"

namespace lacuna::refcheck {

namespace {

using nn::Tensor;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.gaussian());
  return t;
}

Tensor prob_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.05, 0.95));
  return t;
}

std::vector<float> random_target(size_t n, Rng& rng, double p) {
  std::vector<float> y(n);
  for (auto& v : y) v = rng.bernoulli(p) ? 1.0f : 0.0f;
  return y;
}

void avoid_zero(Tensor& t, float margin = 0.05f) {
  for (auto& v : t.values())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
}

void separate_pool_windows(Tensor& t, float margin = 0.02f) {
  int c = t.channels(), nx = t.nx(), ny = t.ny(), nz = t.nz();
  auto idx = [&](int cc, int x, int y, int z) {
    return ((static_cast<size_t>(cc) * nz + z) * ny + y) * nx + x;
  };
  for (int cc = 0; cc < c; ++cc)
    for (int z = 0; z < nz; z += 2)
      for (int y = 0; y < ny; y += 2)
        for (int x = 0; x < nx; x += 2) {
          size_t best = idx(cc, x, y, z);
          float top = -1e30f, second = -1e30f;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                size_t i = idx(cc, x + dx, y + dy, z + dz);
                float v = t.values()[i];
                if (v > top) {
                  second = top;
                  top = v;
                  best = i;
                } else if (v > second) {
                  second = v;
                }
              }
          if (top - second < margin) t.values()[best] += margin;
        }
}

Tensor scalarize(const Tensor& y, const Tensor& pw, const Tensor& pb) {
  return nn::affine_map(nn::global_avg_pool(nn::sigmoid(y)), pw, pb);
}

DT scalarize_ref(const DT& y, const DT& pw, const DT& pb) {
  return affine_map(global_avg_pool(sigmoid(y)), pw, pb);
}

double ref_weighted_bce(const std::vector<double>& p, const std::vector<float>& y, double w,
                        double clip) {
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double pc = std::clamp(p[i], clip, 1.0 - clip);
    acc += -(w * y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
  }
  return acc / static_cast<double>(p.size());
}

double ref_burden_ce(const std::vector<double>& logits, int target) {
  double m = std::max({logits[0], logits[1], logits[2]});
  double z = std::exp(logits[0] - m) + std::exp(logits[1] - m) + std::exp(logits[2] - m);
  return -(logits[static_cast<size_t>(target)] - m - std::log(z));
}

}  // namespace

GradcheckReport run_gradcheck_suite(uint64_t seed, int trials) {
  GradcheckReport report;
  Rng rng(seed);
  auto record = [&](const std::string& op, double err, double tol) {
    report.entries.push_back({op, err, tol});
  };

  {  // conv3
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor x = random_tensor({2, 5, 5, 5}, rng);
      Tensor w = random_tensor({2, 2, 3, 3, 3}, rng, 0.3);
      Tensor b = random_tensor({2}, rng, 0.1);
      Tensor pw = random_tensor({1, 2}, rng);
      Tensor pb = Tensor::zeros({1});
      worst = std::max(worst, gradcheck(
          [&] { return scalarize(nn::conv3(x, w, b), pw, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(conv3({x.shape(), v[0]}, {w.shape(), v[1]}, {b.shape(), v[2]}),
                                 from_tensor(pw), from_tensor(pb))
                .v[0];
          },
          {x, w, b}));
    }
    record("conv3", worst, 1e-4);
  }

  {  // relu, sigmoid, softmax3
    double wr = 0.0, ws = 0.0, wm = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor pw = random_tensor({1, 2}, rng);
      Tensor pb = Tensor::zeros({1});
      Tensor xr = random_tensor({2, 4, 4, 4}, rng);
      avoid_zero(xr);
      wr = std::max(wr, gradcheck(
          [&] { return scalarize(nn::relu(xr), pw, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(relu({xr.shape(), v[0]}), from_tensor(pw), from_tensor(pb)).v[0];
          },
          {xr}));
      Tensor xs = random_tensor({2, 4, 4, 4}, rng);
      ws = std::max(ws, gradcheck(
          [&] { return scalarize(nn::sigmoid(xs), pw, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(sigmoid({xs.shape(), v[0]}), from_tensor(pw), from_tensor(pb))
                .v[0];
          },
          {xs}));
      Tensor logits = random_tensor({3}, rng);
      Tensor pw3 = random_tensor({1, 3}, rng);
      wm = std::max(wm, gradcheck(
          [&] { return nn::affine_map(nn::softmax3(logits), pw3, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return affine_map(softmax3({logits.shape(), v[0]}), from_tensor(pw3), from_tensor(pb))
                .v[0];
          },
          {logits}));
    }
    record("relu", wr, 1e-4);
    record("sigmoid", ws, 1e-4);
    record("softmax3", wm, 1e-4);
  }

  {  // maxpool2, upsample2, concat
    double wp = 0.0, wu = 0.0, wc = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor pw = random_tensor({1, 2}, rng);
      Tensor pb = Tensor::zeros({1});
      Tensor xm = random_tensor({2, 4, 4, 4}, rng);
      separate_pool_windows(xm);
      wp = std::max(wp, gradcheck(
          [&] { return scalarize(nn::maxpool2(xm), pw, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(maxpool2({xm.shape(), v[0]}), from_tensor(pw), from_tensor(pb))
                .v[0];
          },
          {xm}));
      Tensor xu = random_tensor({2, 2, 2, 2}, rng);
      wu = std::max(wu, gradcheck(
          [&] { return scalarize(nn::upsample2(xu), pw, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(upsample2({xu.shape(), v[0]}), from_tensor(pw), from_tensor(pb))
                .v[0];
          },
          {xu}));
      Tensor a = random_tensor({1, 3, 3, 3}, rng);
      Tensor b = random_tensor({2, 3, 3, 3}, rng);
      Tensor pw3 = random_tensor({1, 3}, rng);
      wc = std::max(wc, gradcheck(
          [&] { return scalarize(nn::concat(a, b), pw3, pb); },
          [&](const std::vector<std::vector<double>>& v) {
            return scalarize_ref(concat({a.shape(), v[0]}, {b.shape(), v[1]}), from_tensor(pw3),
                                 from_tensor(pb))
                .v[0];
          },
          {a, b}));
    }
    record("maxpool2", wp, 1e-4);
    record("upsample2", wu, 1e-4);
    record("concat", wc, 1e-4);
  }

  {  // global_avg_pool + affine_map + add + scale
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor xc = random_tensor({3, 4, 4, 4}, rng);
      Tensor w = random_tensor({2, 3}, rng);
      Tensor b = random_tensor({2}, rng);
      Tensor rw = Tensor::from_values({1, 2}, {1.0f, 2.0f});
      Tensor rb = Tensor::zeros({1});
      worst = std::max(worst, gradcheck(
          [&] {
            Tensor base = nn::affine_map(nn::global_avg_pool(xc), w, b);
            Tensor doubled = nn::add(nn::scale(base, 0.5), nn::scale(base, 0.5));
            return nn::affine_map(doubled, rw, rb);
          },
          [&](const std::vector<std::vector<double>>& v) {
            DT base = affine_map(global_avg_pool({xc.shape(), v[0]}), {w.shape(), v[1]},
                                 {b.shape(), v[2]});
            DT doubled = add(scale(base, 0.5), scale(base, 0.5));
            return affine_map(doubled, from_tensor(rw), from_tensor(rb)).v[0];
          },
          {xc, w, b}));
    }
    record("gap_affine_add_scale", worst, 1e-4);
  }

  {  // fnw_bce and voxel_ratio_bce
    double wf = 0.0, wv = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor pred = prob_tensor({1, 4, 4, 4}, rng);
      std::vector<float> target = random_target(pred.size(), rng, 0.3);
      LossConfig cfg;
      cfg.w_fn = rng.uniform(1.0, 20.0);
      wf = std::max(wf, gradcheck(
          [&] { return fnw_bce(pred, target, cfg); },
          [&](const std::vector<std::vector<double>>& v) {
            return ref_weighted_bce(v[0], target, cfg.w_fn, cfg.p_clip);
          },
          {pred}, 1e-4));

      Tensor pred2 = prob_tensor({1, 4, 4, 4}, rng);
      std::vector<float> target2 = random_target(pred2.size(), rng, 0.2);
      double pos = 0, neg = 0;
      for (float y : target2) (y > 0 ? pos : neg) += 1.0;
      double w = pos > 0 ? neg / pos : 1.0;
      wv = std::max(wv, gradcheck(
          [&] { return voxel_ratio_bce(pred2, target2, cfg); },
          [&](const std::vector<std::vector<double>>& v) {
            return ref_weighted_bce(v[0], target2, w, cfg.p_clip);
          },
          {pred2}, 1e-4));
    }
    record("fnw_bce", wf, 1e-5);
    record("voxel_ratio_bce", wv, 1e-5);
  }

  {  // burden_ce and joint_loss
    double wb = 0.0, wj = 0.0;
    for (int t = 0; t < trials; ++t) {
      Tensor logits = random_tensor({3}, rng);
      int target = static_cast<int>(rng.uniform_int(0, 2));
      wb = std::max(wb, gradcheck(
          [&] { return burden_ce(logits, static_cast<BurdenCategory>(target)); },
          [&](const std::vector<std::vector<double>>& v) { return ref_burden_ce(v[0], target); },
          {logits}, 1e-4));

      Tensor pred = prob_tensor({1, 4, 4, 4}, rng);
      std::vector<float> mask = random_target(pred.size(), rng, 0.15);
      Tensor jl = random_tensor({3}, rng);
      LossConfig cfg;
      cfg.w_fn = rng.uniform(1.0, 20.0);
      cfg.lambda_burden = rng.uniform(0.2, 2.0);
      int cat = static_cast<int>(category_from_mask(mask, {4, 4, 4}));
      wj = std::max(wj, gradcheck(
          [&] { return joint_loss(pred, mask, {4, 4, 4}, jl, cfg); },
          [&](const std::vector<std::vector<double>>& v) {
            return ref_weighted_bce(v[0], mask, cfg.w_fn, cfg.p_clip) +
                   cfg.lambda_burden * ref_burden_ce(v[1], cat);
          },
          {pred, jl}, 1e-4));
    }
    record("burden_ce", wb, 1e-5);
    record("joint_loss", wj, 1e-4);
  }

  {  // full U-Net composite
    nn::UNetConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.in_channels = 1;
    cfg.classifier_head = true;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      nn::ParamSet params = nn::unet_init(cfg, rng);
      Tensor input = random_tensor({1, 4, 4, 4}, rng);
      Tensor pw = random_tensor({1, 1}, rng);
      Tensor pb = Tensor::zeros({1});
      Tensor cw = random_tensor({1, 3}, rng);

      std::vector<Tensor> leaves = {input};
      for (auto& tn : params.tensors) leaves.push_back(tn);

      // double reference mirroring unet_forward's wiring
      auto ref_forward = [&](const std::vector<std::vector<double>>& v) {
        auto param = [&](const std::string& name) {
          for (size_t i = 0; i < params.names.size(); ++i)
            if (params.names[i] == name) return DT{params.tensors[i].shape(), v[i + 1]};
          throw Error(ErrorCode::ConfigError, "missing param " + name);
        };
        auto block = [&](const DT& x, const std::string& name) {
          return relu(conv3(x, param(name + "_w"), param(name + "_b")));
        };
        std::vector<DT> skips;
        DT x{input.shape(), v[0]};
        for (int l = 0; l < cfg.depth - 1; ++l) {
          std::string e = "enc" + std::to_string(l);
          x = block(block(x, e + "_conv0"), e + "_conv1");
          skips.push_back(x);
          x = maxpool2(x);
        }
        DT bottleneck = block(block(x, "bot_conv0"), "bot_conv1");
        x = bottleneck;
        for (int l = cfg.depth - 2; l >= 0; --l) {
          std::string d = "dec" + std::to_string(l);
          x = concat(upsample2(x), skips[static_cast<size_t>(l)]);
          x = block(block(x, d + "_conv0"), d + "_conv1");
        }
        DT dense = sigmoid(conv3(x, param("head_w"), param("head_b")));
        DT logits = affine_map(global_avg_pool(bottleneck), param("cls_w"), param("cls_b"));
        double a = affine_map(global_avg_pool(dense), from_tensor(pw), from_tensor(pb)).v[0];
        double c = affine_map(softmax3(logits), from_tensor(cw), from_tensor(pb)).v[0];
        return a + c;
      };

      worst = std::max(worst, gradcheck(
          [&] {
            nn::UNetOutput out = nn::unet_forward(cfg, params, input);
            Tensor a = nn::affine_map(nn::global_avg_pool(out.dense), pw, pb);
            Tensor c = nn::affine_map(nn::softmax3(*out.class_logits), cw, pb);
            return nn::add(a, c);
          },
          ref_forward, leaves, 1e-4, 2));
    }
    record("unet_composite", worst, 1e-3);
  }

  return report;
}

}  // namespace lacuna::refcheck
