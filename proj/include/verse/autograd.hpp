#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Ops build the graph eagerly while grad
// mode is on and at least one input requires a gradient; otherwise they return
// plain constants, so inference allocates no backward closures.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "verse/tensor.hpp"

namespace verse::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (!grad.defined()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

bool grad_enabled();

/// Disables graph construction for the current thread within its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// In-place access for optimizers and checkpoint loading. Only meaningful on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  void zero_grad() {
    if (node_->grad.defined()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs the backward pass from a single-element root, accumulating into the
/// grad buffers of every reachable node that requires a gradient.
template <typename T>
void backward(const Var<T>& root);

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  return Var<T>(std::move(value), true);
}

template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>(v.value(), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// y = x W^T + b over the last axis. w is [out, in]; b is [out] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

/// x is [H, W, Cin], w is [Cout, k, k, Cin], b is [Cout] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad);

template <typename T>
Var<T> relu(const Var<T>& x);
/// tanh approximation.
template <typename T>
Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// x is [H, W, C]; half-pixel bilinear resampling to [out_h, out_w, C].
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

/// Scaled dot-product multi-head attention, softmax(mask + QK^T/sqrt(d))V.
/// key_allowed (empty = all allowed) masks keys for every query row; a fully
/// masked row falls back to unmasked attention. probs_out, when given,
/// receives the [heads, queries, keys] post-softmax weights.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 std::span<const std::uint8_t> key_allowed = {}, Tensor<T>* probs_out = nullptr);

/// Mean of the (2r+1)^2 window around each (x, y) centre of an [H, W, C] map,
/// replicate-clamped at the borders. Returns [centres, C].
template <typename T>
Var<T> window_pool(const Var<T>& f, std::span<const std::array<int, 2>> centres, int radius);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_rows(const Var<T>& x, int begin, int end);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Mean of single-element vars.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& scalars);

/// w_ce * mean BCE(prob, gt) + w_dice * (1 - (2 sum(pg) + s) / (sum(p) + sum(g) + s)).
template <typename T>
Var<T> bce_dice_loss(const Var<T>& prob, const Tensor<T>& gt, T w_ce, T w_dice, T smooth);

}  // namespace verse::ad
