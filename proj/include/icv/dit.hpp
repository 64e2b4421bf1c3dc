// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "icv/autograd.hpp"
#include "icv/checkpoint.hpp"
#include "icv/prompt.hpp"

namespace icv {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t patch_t = 1;
  std::size_t patch_h = 2;
  std::size_t patch_w = 2;
  std::size_t text_len = kDefaultTextLength;
  std::size_t vocab_size = kDefaultVocabSize;
  std::size_t channels = 3;
  // Largest composite the position tables cover.
  std::size_t max_frames = 8;
  std::size_t max_height = 32;
  std::size_t max_width = 32;
  std::size_t mlp_ratio = 4;
  std::size_t timesteps = 1000;

  std::size_t patch_dim() const { return patch_t * channels * patch_h * patch_w; }
  std::size_t head_dim() const { return dim / heads; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);

// Token grid of a composite after patchification.
struct PatchGrid {
  std::size_t frames, rows, cols;
  std::size_t tokens() const { return frames * rows * cols; }
};
// Throws ConfigError when the extents are not divisible by the patch sizes.
PatchGrid patch_grid(const ModelConfig& cfg, std::size_t frames, std::size_t height,
                     std::size_t width);

// x [B, F, C, H, W] -> tokens [B, N, pt*C*ph*pw]. Token n sits at grid
// position (n / (rows*cols), (n / cols) % rows, n % cols); its features are
// one pt x C x ph x pw block flattened row-major.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, const ModelConfig& cfg);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, const ModelConfig& cfg, std::size_t frames,
                     std::size_t height, std::size_t width);

// Named parameters in a fixed registration order.
template <typename T>
class DiTParameters {
 public:
  DiTParameters() = default;
  DiTParameters(ModelConfig config, std::uint64_t seed) : config_(config), seed_(seed) {}

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  void add(const std::string& name, Tensor<T> value);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const noexcept { return entries_; }

  std::size_t parameter_count() const;
  void set_trainable(bool on);
  // Independent copy; the clone shares no nodes with this object.
  DiTParameters clone() const;

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Names of the linear layers in block `i` that may carry adapters.
std::vector<std::string> block_linear_names(std::size_t block);

// Truncated-normal (sigma 0.02) weights, zero biases, and exactly zero
// adaLN modulation heads and final projection.
template <typename T>
DiTParameters<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct LoraWeights;

// Batched conditioning for one forward.
struct TextBatch {
  std::vector<std::int32_t> ids;    // [B * L]
  std::vector<std::uint8_t> valid;  // [B * L]
  std::size_t batch = 0;
  std::size_t length = 0;

  static TextBatch from(std::span<const TextEmbedding> texts);
};

// Noise prediction for composites x [B, F, C, H, W] at steps t [B]. Text
// tokens are prefixed to the video tokens and attended jointly; padded text
// positions are masked out as keys.
template <typename T>
Var<T> dit_forward(const DiTParameters<T>& params, const Tensor<T>& x,
                   std::span<const int> timesteps, const TextBatch& text,
                   const LoraWeights<T>* lora = nullptr);

// Sinusoidal features of integer diffusion steps, [B, dim].
template <typename T>
Tensor<T> timestep_features(std::span<const int> timesteps, std::size_t dim);

// Model checkpoints: a TensorBundle of kind "model" with config and seed.
template <typename T>
void save_model(const std::filesystem::path& dir, const DiTParameters<T>& params,
                const Json& extra_meta = Json::object());
template <typename T>
DiTParameters<T> load_model(const std::filesystem::path& dir);
template <typename T>
DiTParameters<T> params_from_bundle(const TensorBundle<T>& bundle);
template <typename T>
TensorBundle<T> params_to_bundle(const DiTParameters<T>& params);

}  // namespace icv
