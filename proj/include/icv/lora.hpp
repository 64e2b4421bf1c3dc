// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icv/dit.hpp"

namespace icv {

// Which block linears receive low-rank adapters and at what rank.
struct LoraSpec {
  std::size_t rank = 32;
  double alpha = 32.0;
  // Layer kinds ("attn.qkv", "attn.out", "mlp.fc1", "mlp.fc2") or full layer
  // names ("blocks.2.attn.qkv").
  std::vector<std::string> targets = {"attn.qkv", "attn.out", "mlp.fc1", "mlp.fc2"};

  double scaling() const { return alpha / static_cast<double>(rank); }
  friend bool operator==(const LoraSpec&, const LoraSpec&) = default;
};

void to_json(Json& j, const LoraSpec& s);
void from_json(const Json& j, LoraSpec& s);

// Adapter for one linear layer W [out, in]: delta = scaling * B A with
// A [r, in] and B [out, r].
template <typename T>
struct LoraLayer {
  std::string name;
  Var<T> a;
  Var<T> b;
};

template <typename T>
struct LoraWeights {
  LoraSpec spec;
  std::uint64_t seed = 0;
  std::size_t model_depth = 0;
  std::size_t model_dim = 0;
  std::vector<LoraLayer<T>> layers;

  T scaling() const { return static_cast<T>(spec.scaling()); }
  const LoraLayer<T>* find(const std::string& layer_name) const;
  std::vector<std::pair<std::string, Var<T>>> named_parameters() const;
};

// Creates adapters with A ~ N(0, 1/r) and B = 0, so the adapted model starts
// identical to the base. Throws ConfigError for unknown targets or a rank
// larger than min(in, out) of any targeted layer.
template <typename T>
LoraWeights<T> inject(const DiTParameters<T>& params, const LoraSpec& spec, std::uint64_t seed);

// scaling * (x A^T) B^T, the adapter's contribution to one linear layer.
template <typename T>
Var<T> lora_delta(const Var<T>& x, const LoraLayer<T>& layer, T scaling);

// W <- W + scaling * B A for every adapted layer (unmerge subtracts).
template <typename T>
DiTParameters<T> merge(const DiTParameters<T>& params, const LoraWeights<T>& lora);
template <typename T>
DiTParameters<T> unmerge(const DiTParameters<T>& params, const LoraWeights<T>& lora);

// Adapter checkpoints: a TensorBundle of kind "lora" embedding the spec,
// seed, and the structure of the model it was injected into.
template <typename T>
void save_lora(const std::filesystem::path& dir, const LoraWeights<T>& lora);
template <typename T>
LoraWeights<T> load_lora(const std::filesystem::path& dir);
// Throws StructureError unless `lora` matches the layers of `params`.
template <typename T>
void check_lora_matches(const DiTParameters<T>& params, const LoraWeights<T>& lora);
template <typename T>
LoraWeights<T> load_lora(const std::filesystem::path& dir, const DiTParameters<T>& target);

}  // namespace icv
