// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icv/autograd.hpp"

namespace icv {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam over a fixed list of named parameters.
// Moment buffers are created zeroed to match each parameter's shape.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::string name;
    Var<T> param;
    Tensor<T> m;
    Tensor<T> v;
  };

  AdamW(std::vector<std::pair<std::string, Var<T>>> params, AdamWConfig config);

  // Applies one update from the parameters' accumulated gradients (a missing
  // gradient counts as zero). `lr` overrides the configured rate when >= 0.
  // Throws NumericError naming the first non-finite gradient before any
  // parameter is touched.
  void step(double lr = -1.0);
  void zero_grad();

  // Global L2 norm over all gradients; rescales them when above max_norm.
  // Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::int64_t step_count() const noexcept { return step_; }
  void set_step_count(std::int64_t s) noexcept { step_ = s; }
  const AdamWConfig& config() const noexcept { return config_; }
  std::vector<Slot>& slots() noexcept { return slots_; }
  const std::vector<Slot>& slots() const noexcept { return slots_; }

 private:
  std::vector<Slot> slots_;
  AdamWConfig config_;
  std::int64_t step_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace icv
