#ifndef LACUNA_TENSOR_HPP
#define LACUNA_TENSOR_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lacuna/error.hpp"
#include "lacuna/rng.hpp"

namespace lacuna::nn {

/// A node in the (DAG-shaped) computation tape. Spatial tensors use shape
/// {channels, nx, ny, nz}; weights use their natural shapes.
struct Node {
  std::vector<int> shape;
  std::vector<float> val;
  std::vector<float> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // propagate this->grad to parents

  size_t size() const {
    size_t s = 1;
    for (int d : shape) s *= static_cast<size_t>(d);
    return s;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  static Tensor zeros(std::vector<int> shape);
  static Tensor from_values(std::vector<int> shape, std::vector<float> values);

  const std::vector<int>& shape() const { return node_->shape; }
  std::vector<float>& values() { return node_->val; }
  const std::vector<float>& values() const { return node_->val; }
  std::vector<float>& grad() { return node_->grad; }
  const std::vector<float>& grad() const { return node_->grad; }
  size_t size() const { return node_->size(); }
  std::shared_ptr<Node> node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

  int channels() const { return node_->shape[0]; }
  int nx() const { return node_->shape[1]; }
  int ny() const { return node_->shape[2]; }
  int nz() const { return node_->shape[3]; }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse sweep from a scalar root; accumulates into leaf grads.
void backward(const Tensor& root);

// --- differentiable operations ---

/// 3D cross-correlation, odd kernel (1 or 3), stride 1, zero padding k/2.
/// weights shape {out_c, in_c, k, k, k}, bias shape {out_c}.
Tensor conv3(const Tensor& input, const Tensor& weights, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over a length-3 vector (max-subtracted for stability).
Tensor softmax3(const Tensor& logits);

/// 2x2x2 max pooling (argmax routing in backward). Requires even dims.
Tensor maxpool2(const Tensor& x);
/// Nearest-neighbor x2 upsampling (summed backward).
Tensor upsample2(const Tensor& x);
/// Channel concatenation; spatial shapes must match.
Tensor concat(const Tensor& a, const Tensor& b);

/// Per-channel spatial mean: {c,x,y,z} -> {c}.
Tensor global_avg_pool(const Tensor& x);
/// weights {k, c}, bias {k}: {c} -> {k}.
Tensor affine_map(const Tensor& x, const Tensor& weights, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

}  // namespace lacuna::nn

#endif
