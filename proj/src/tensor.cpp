#include "lacuna/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace lacuna::nn {

namespace {

std::shared_ptr<Node> make_node(std::vector<int> shape) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.assign(n->size(), 0.0f);
  n->grad.assign(n->size(), 0.0f);
  return n;
}

void require(bool cond, const char* msg) {
  if (!cond) throw Error(ErrorCode::ShapeMismatch, msg);
}

void require_spatial(const Tensor& t) {
  require(t.defined() && t.shape().size() == 4, "expected a {c,x,y,z} tensor");
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(make_node(std::move(shape))); }

Tensor Tensor::from_values(std::vector<int> shape, std::vector<float> values) {
  auto n = make_node(std::move(shape));
  if (values.size() != n->size())
    throw Error(ErrorCode::ShapeMismatch, "value count does not match shape");
  n->val = std::move(values);
  return Tensor(n);
}

void backward(const Tensor& root) {
  require(root.defined() && root.size() == 1, "backward root must be a scalar");

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Tensor conv3(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_spatial(input);
  require(weights.shape().size() == 5, "conv weights must be {out_c,in_c,k,k,k}");
  const int out_c = weights.shape()[0], in_c = weights.shape()[1], k = weights.shape()[2];
  require(weights.shape()[3] == k && weights.shape()[4] == k, "conv kernel must be cubic");
  require(k == 1 || k == 3, "conv kernel size must be 1 or 3");
  require(input.channels() == in_c, "conv input channel mismatch");
  require(bias.shape() == std::vector<int>{out_c}, "conv bias shape mismatch");

  const int nx = input.nx(), ny = input.ny(), nz = input.nz();
  const size_t plane = static_cast<size_t>(nx) * ny;
  const size_t vol = plane * nz;
  const int p = k / 2;

  auto out = make_node({out_c, nx, ny, nz});
  out->parents = {input.node(), weights.node(), bias.node()};

  const float* in = input.values().data();
  const float* w = weights.values().data();
  const float* b = bias.values().data();
  float* o = out->val.data();

  for (int oc = 0; oc < out_c; ++oc) {
    float* oc_base = o + static_cast<size_t>(oc) * vol;
    std::fill(oc_base, oc_base + vol, b[oc]);
    for (int ic = 0; ic < in_c; ++ic) {
      const float* ic_base = in + static_cast<size_t>(ic) * vol;
      for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const float wv = w[(((static_cast<size_t>(oc) * in_c + ic) * k + kz) * k + ky) * k + kx];
            if (wv == 0.0f) continue;
            const int dz = kz - p, dy = ky - p, dx = kx - p;
            const int z0 = std::max(0, -dz), z1 = std::min(nz, nz - dz);
            const int y0 = std::max(0, -dy), y1 = std::min(ny, ny - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
            for (int z = z0; z < z1; ++z)
              for (int y = y0; y < y1; ++y) {
                float* orow = oc_base + z * plane + static_cast<size_t>(y) * nx;
                const float* irow = ic_base + (z + dz) * plane + static_cast<size_t>(y + dy) * nx + dx;
                for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
              }
          }
    }
  }

  std::weak_ptr<Node> wout = out;
  out->backward_fn = [in_node = input.node(), w_node = weights.node(), b_node = bias.node(),
                      out_c, in_c, k, nx, ny, nz, plane, vol, p](Node& self) {
    const float* go = self.grad.data();
    const float* in = in_node->val.data();
    const float* w = w_node->val.data();
    float* gin = in_node->grad.data();
    float* gw = w_node->grad.data();
    float* gb = b_node->grad.data();

    for (int oc = 0; oc < out_c; ++oc) {
      const float* go_base = go + static_cast<size_t>(oc) * vol;
      double acc_b = 0.0;
      for (size_t i = 0; i < vol; ++i) acc_b += go_base[i];
      gb[oc] += static_cast<float>(acc_b);

      for (int ic = 0; ic < in_c; ++ic) {
        const float* in_base = in + static_cast<size_t>(ic) * vol;
        float* gin_base = gin + static_cast<size_t>(ic) * vol;
        for (int kz = 0; kz < k; ++kz)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const size_t widx = (((static_cast<size_t>(oc) * in_c + ic) * k + kz) * k + ky) * k + kx;
              const float wv = w[widx];
              const int dz = kz - p, dy = ky - p, dx = kx - p;
              const int z0 = std::max(0, -dz), z1 = std::min(nz, nz - dz);
              const int y0 = std::max(0, -dy), y1 = std::min(ny, ny - dy);
              const int x0 = std::max(0, -dx), x1 = std::min(nx, nx - dx);
              double acc_w = 0.0;
              for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                  const float* grow = go_base + z * plane + static_cast<size_t>(y) * nx;
                  const float* irow = in_base + (z + dz) * plane + static_cast<size_t>(y + dy) * nx + dx;
                  float* grin = gin_base + (z + dz) * plane + static_cast<size_t>(y + dy) * nx + dx;
                  for (int x = x0; x < x1; ++x) {
                    acc_w += static_cast<double>(grow[x]) * irow[x];
                    grin[x] += wv * grow[x];
                  }
                }
              gw[widx] += static_cast<float>(acc_w);
            }
      }
    }
  };
  return Tensor(out);
}

Tensor relu(const Tensor& x) {
  require(x.defined(), "relu on undefined tensor");
  auto out = make_node(x.shape());
  out->parents = {x.node()};
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = std::max(0.0f, x.values()[i]);
  out->backward_fn = [xn = x.node()](Node& self) {
    for (size_t i = 0; i < self.val.size(); ++i)
      if (xn->val[i] > 0.0f) xn->grad[i] += self.grad[i];
  };
  return Tensor(out);
}

Tensor sigmoid(const Tensor& x) {
  require(x.defined(), "sigmoid on undefined tensor");
  auto out = make_node(x.shape());
  out->parents = {x.node()};
  for (size_t i = 0; i < out->size(); ++i)
    out->val[i] = 1.0f / (1.0f + std::exp(-x.values()[i]));
  out->backward_fn = [xn = x.node()](Node& self) {
    for (size_t i = 0; i < self.val.size(); ++i) {
      float s = self.val[i];
      xn->grad[i] += self.grad[i] * s * (1.0f - s);
    }
  };
  return Tensor(out);
}

Tensor softmax3(const Tensor& logits) {
  require(logits.defined() && logits.size() == 3, "softmax3 expects 3 logits");
  auto out = make_node(logits.shape());
  out->parents = {logits.node()};
  const auto& v = logits.values();
  float m = std::max({v[0], v[1], v[2]});
  double sum = 0.0;
  double e[3];
  for (int i = 0; i < 3; ++i) {
    e[i] = std::exp(static_cast<double>(v[i]) - m);
    sum += e[i];
  }
  for (int i = 0; i < 3; ++i) out->val[i] = static_cast<float>(e[i] / sum);
  out->backward_fn = [xn = logits.node()](Node& self) {
    double dot = 0.0;
    for (int i = 0; i < 3; ++i) dot += static_cast<double>(self.grad[i]) * self.val[i];
    for (int i = 0; i < 3; ++i)
      xn->grad[i] += static_cast<float>(self.val[i] * (self.grad[i] - dot));
  };
  return Tensor(out);
}

Tensor maxpool2(const Tensor& x) {
  require_spatial(x);
  if (x.nx() % 2 || x.ny() % 2 || x.nz() % 2)
    throw Error(ErrorCode::OddSpatialDim, "maxpool2 requires even spatial dims");
  const int c = x.channels(), nx = x.nx(), ny = x.ny(), nz = x.nz();
  const int ox = nx / 2, oy = ny / 2, oz = nz / 2;
  auto out = make_node({c, ox, oy, oz});
  out->parents = {x.node()};

  auto argmax = std::make_shared<std::vector<size_t>>(out->size());
  const float* in = x.values().data();
  size_t oi = 0;
  for (int ch = 0; ch < c; ++ch) {
    const size_t cbase = static_cast<size_t>(ch) * nx * ny * nz;
    for (int z = 0; z < oz; ++z)
      for (int y = 0; y < oy; ++y)
        for (int xx = 0; xx < ox; ++xx, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          size_t best_idx = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                size_t idx = cbase + (static_cast<size_t>(2 * z + dz) * ny + (2 * y + dy)) * nx + (2 * xx + dx);
                if (in[idx] > best) {
                  best = in[idx];
                  best_idx = idx;
                }
              }
          out->val[oi] = best;
          (*argmax)[oi] = best_idx;
        }
  }
  out->backward_fn = [xn = x.node(), argmax](Node& self) {
    for (size_t i = 0; i < self.val.size(); ++i)
      xn->grad[(*argmax)[i]] += self.grad[i];
  };
  return Tensor(out);
}

Tensor upsample2(const Tensor& x) {
  require_spatial(x);
  const int c = x.channels(), nx = x.nx(), ny = x.ny(), nz = x.nz();
  auto out = make_node({c, 2 * nx, 2 * ny, 2 * nz});
  out->parents = {x.node()};
  const float* in = x.values().data();
  size_t oi = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int z = 0; z < 2 * nz; ++z)
      for (int y = 0; y < 2 * ny; ++y)
        for (int xx = 0; xx < 2 * nx; ++xx, ++oi)
          out->val[oi] = in[(static_cast<size_t>(ch) * nz + z / 2) * ny * nx + static_cast<size_t>(y / 2) * nx + xx / 2];
  out->backward_fn = [xn = x.node(), c, nx, ny, nz](Node& self) {
    size_t oi = 0;
    for (int ch = 0; ch < c; ++ch)
      for (int z = 0; z < 2 * nz; ++z)
        for (int y = 0; y < 2 * ny; ++y)
          for (int xx = 0; xx < 2 * nx; ++xx, ++oi)
            xn->grad[(static_cast<size_t>(ch) * nz + z / 2) * ny * nx + static_cast<size_t>(y / 2) * nx + xx / 2] +=
                self.grad[oi];
  };
  return Tensor(out);
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require_spatial(a);
  require_spatial(b);
  require(a.nx() == b.nx() && a.ny() == b.ny() && a.nz() == b.nz(),
          "concat spatial shape mismatch");
  auto out = make_node({a.channels() + b.channels(), a.nx(), a.ny(), a.nz()});
  out->parents = {a.node(), b.node()};
  std::copy(a.values().begin(), a.values().end(), out->val.begin());
  std::copy(b.values().begin(), b.values().end(), out->val.begin() + static_cast<long>(a.size()));
  out->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
    size_t na = an->size();
    for (size_t i = 0; i < na; ++i) an->grad[i] += self.grad[i];
    for (size_t i = 0; i < bn->size(); ++i) bn->grad[i] += self.grad[na + i];
  };
  return Tensor(out);
}

Tensor global_avg_pool(const Tensor& x) {
  require_spatial(x);
  const int c = x.channels();
  const size_t vol = x.size() / static_cast<size_t>(c);
  auto out = make_node({c});
  out->parents = {x.node()};
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (size_t i = 0; i < vol; ++i) acc += x.values()[static_cast<size_t>(ch) * vol + i];
    out->val[ch] = static_cast<float>(acc / static_cast<double>(vol));
  }
  out->backward_fn = [xn = x.node(), c, vol](Node& self) {
    for (int ch = 0; ch < c; ++ch) {
      float g = self.grad[ch] / static_cast<float>(vol);
      for (size_t i = 0; i < vol; ++i) xn->grad[static_cast<size_t>(ch) * vol + i] += g;
    }
  };
  return Tensor(out);
}

Tensor affine_map(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require(x.defined() && x.shape().size() == 1, "affine_map expects a vector input");
  const int c = x.shape()[0];
  require(weights.shape().size() == 2 && weights.shape()[1] == c, "affine weights shape mismatch");
  const int k = weights.shape()[0];
  require(bias.shape() == std::vector<int>{k}, "affine bias shape mismatch");

  auto out = make_node({k});
  out->parents = {x.node(), weights.node(), bias.node()};
  for (int i = 0; i < k; ++i) {
    double acc = bias.values()[i];
    for (int j = 0; j < c; ++j)
      acc += static_cast<double>(weights.values()[static_cast<size_t>(i) * c + j]) * x.values()[j];
    out->val[i] = static_cast<float>(acc);
  }
  out->backward_fn = [xn = x.node(), wn = weights.node(), bn = bias.node(), k, c](Node& self) {
    for (int i = 0; i < k; ++i) {
      float g = self.grad[i];
      bn->grad[i] += g;
      for (int j = 0; j < c; ++j) {
        wn->grad[static_cast<size_t>(i) * c + j] += g * xn->val[j];
        xn->grad[j] += g * wn->val[static_cast<size_t>(i) * c + j];
      }
    }
  };
  return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(), "add shape mismatch");
  auto out = make_node(a.shape());
  out->parents = {a.node(), b.node()};
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a.values()[i] + b.values()[i];
  out->backward_fn = [an = a.node(), bn = b.node()](Node& self) {
    for (size_t i = 0; i < self.val.size(); ++i) {
      an->grad[i] += self.grad[i];
      bn->grad[i] += self.grad[i];
    }
  };
  return Tensor(out);
}

Tensor scale(const Tensor& x, double factor) {
  require(x.defined(), "scale on undefined tensor");
  auto out = make_node(x.shape());
  out->parents = {x.node()};
  for (size_t i = 0; i < out->size(); ++i)
    out->val[i] = static_cast<float>(factor * x.values()[i]);
  out->backward_fn = [xn = x.node(), factor](Node& self) {
    for (size_t i = 0; i < self.val.size(); ++i)
      xn->grad[i] += static_cast<float>(factor * self.grad[i]);
  };
  return Tensor(out);
}

}  // namespace lacuna::nn
