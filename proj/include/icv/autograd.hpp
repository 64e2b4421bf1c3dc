// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "icv/tensor.hpp"

namespace icv {

// One recorded value in the computation graph. Leaves have no parents;
// interior nodes carry the closure that pushes their gradient to parents.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void accumulate(const Tensor<T>& g);
};

// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

  const Tensor<T>& value() const { return node_->value; }
  // Only optimizers and parameter loaders mutate values in place.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t numel() const { return node_->value.numel(); }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // A new leaf sharing no graph history with this one.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Graph recording is on by default; a guard disables it for inference so
// forwards keep no intermediate buffers alive.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Nodes reachable from root that participate in differentiation, parents
// before children. Each node appears once.
template <typename T>
std::vector<Node<T>*> topological_order(const Var<T>& root);

// Seeds d(root)/d(root) = 1 and runs the chain rule in reverse topological
// order. Leaf gradients accumulate across uses and across calls.
template <typename T>
void backward(const Var<T>& root);

// ---- operations ----------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// y = x W^T + b over the last axis; W is [out, in]; bias may be empty.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = Var<T>());

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
// a + c for a constant tensor broadcast over leading axes of a.
template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
// Mean of squared differences over all elements.
template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Tensor<T>& target);

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

// Normalizes over the last axis; gain/bias are optional [n] vectors.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

template <typename T>
Var<T> gelu_tanh(const Var<T>& x);
template <typename T>
Var<T> silu(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);

// [B, La, D] ++ [B, Lb, D] -> [B, La + Lb, D]
template <typename T>
Var<T> concat_seq(const Var<T>& a, const Var<T>& b);
// x[:, start:start+len, :]
template <typename T>
Var<T> slice_seq(const Var<T>& x, std::size_t start, std::size_t len);
// x[:, start:start+len] for a [B, K] input.
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t start, std::size_t len);

// x * (1 + scale) + shift, with [B, D] modulation broadcast over the sequence.
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale);
// x + gate * y, gate [B, D] broadcast over the sequence.
template <typename T>
Var<T> gated_add(const Var<T>& x, const Var<T>& gate, const Var<T>& y);

// table [V, D] gathered by ids [B, L]; a negative id yields a zero row.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids, std::size_t batch);

// h [B, N, D] + frame[f] + row[r] + col[c] for tokens laid out in (f, r, c)
// row-major order over a grid of extents (gf, gr, gc).
template <typename T>
Var<T> add_factorized_pos(const Var<T>& h, const Var<T>& frame, const Var<T>& row,
                          const Var<T>& col, std::size_t gf, std::size_t gr, std::size_t gc);

// Multi-head scaled dot-product attention over a packed [B, S, 3D] qkv
// projection. key_valid[b * S + j] == 0 removes key j from every query of
// sample b. Returns [B, S, D].
template <typename T>
Var<T> attention(const Var<T>& qkv, std::size_t heads, std::span<const std::uint8_t> key_valid);

// Elementwise gather/scatter by a fixed index map: out[i] = x[index[i]].
// Used for patchify/unpatchify, which are pure permutations.
template <typename T>
Var<T> gather_index(const Var<T>& x, Shape out_shape,
                    std::shared_ptr<const std::vector<std::size_t>> index);

}  // namespace icv
