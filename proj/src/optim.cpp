// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/optim.hpp"

#include <cmath>

namespace icv {

template <typename T>
AdamW<T>::AdamW(std::vector<std::pair<std::string, Var<T>>> params, AdamWConfig config)
    : config_(config) {
  slots_.reserve(params.size());
  for (auto& [name, p] : params) {
    slots_.push_back(Slot{name, p, Tensor<T>(p.shape()), Tensor<T>(p.shape())});
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  if (lr < 0) lr = config_.lr;
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    for (auto g : s.param.grad().data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + s.name + "'");
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (auto& s : slots_) {
    Tensor<T>& w = s.param.mutable_value();
    const bool has_grad = s.param.has_grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double g = has_grad ? static_cast<double>(s.param.grad()[i]) : 0.0;
      const double m = b1 * s.m[i] + (1.0 - b1) * g;
      const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
      s.m[i] = static_cast<T>(m);
      s.v[i] = static_cast<T>(v);
      const double update = (m / c1) / (std::sqrt(v / c2) + config_.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) * decay - lr * update);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

template <typename T>
double AdamW<T>::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    for (auto g : s.param.grad().data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      // grad() is const on Var; the node owns the buffer.
      for (auto& g : s.param.node()->grad.data()) g *= factor;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace icv
