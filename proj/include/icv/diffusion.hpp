// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "icv/dit.hpp"
#include "icv/latent_grid.hpp"
#include "icv/lora.hpp"
#include "icv/rng.hpp"

namespace icv {

struct NoiseSchedule {
  std::size_t steps = 0;  // T
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double snr(std::size_t t) const { return alpha_bars[t] / (1.0 - alpha_bars[t]); }
};

// Betas linearly spaced, endpoints inclusive; alpha_bars by running product.
NoiseSchedule linear_schedule(std::size_t steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02);

struct SamplerConfig {
  std::size_t steps = 50;
  double guidance = 6.0;
  std::uint64_t seed = 0;
  double eta = 0.0;
  // Clamp each x0 estimate to the data range [-1, 1] and re-derive the noise
  // direction from it.
  bool clip = true;

  void validate(const NoiseSchedule& schedule) const;
};

// Evenly strided integer timesteps, descending from T-1 to 0. A single
// step visits only T-1.
std::vector<int> sampling_timesteps(std::size_t T, std::size_t steps);

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. The batched form reads one
// timestep per leading-axis slice.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule);
template <typename T>
Tensor<T> q_sample_batch(const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps,
                         const NoiseSchedule& schedule);

template <typename T>
struct TrainBatch {
  Tensor<T> x0;                     // [B, F, C, H, W]
  std::vector<TextEmbedding> texts;  // B token sequences
  std::vector<int> timesteps;       // B draws, uniform over [0, T)
  Tensor<T> noise;                  // standard normal, shaped like x0
  std::vector<std::uint8_t> dropped;  // prompt-dropout flags

  std::size_t size() const { return timesteps.size(); }
};

// Draws timesteps, dropout flags, then noise from `rng`, in that order.
template <typename T>
TrainBatch<T> make_batch(Tensor<T> x0, std::vector<TextEmbedding> texts,
                         const NoiseSchedule& schedule, Rng& rng, double dropout = 0.1);

template <typename T>
using ModelFn = std::function<Var<T>(const Tensor<T>& x_t, std::span<const int> t, const TextBatch& text)>;

// Mean squared error between predicted and true noise. Dropped samples see
// the null prompt. Throws NumericError naming the batch on a non-finite loss.
template <typename T>
Var<T> training_loss(const ModelFn<T>& model, const TrainBatch<T>& batch,
                     const NoiseSchedule& schedule);
template <typename T>
Var<T> training_loss(const DiTParameters<T>& params, const TrainBatch<T>& batch,
                     const NoiseSchedule& schedule, const LoraWeights<T>* lora = nullptr);

// Anything that predicts noise for [B, F, C, H, W] states.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor<float> predict(const Tensor<float>& x_t, std::span<const int> t,
                                const TextBatch& text) = 0;
  virtual std::size_t vocab_size() const { return kDefaultVocabSize; }
  virtual std::size_t text_length() const { return kDefaultTextLength; }

  TextEmbedding tokens(std::string_view prompt) const {
    return text_tokens(prompt, vocab_size(), text_length());
  }
  TextEmbedding null_tokens() const { return icv::null_tokens(text_length()); }
};

// Inference with a (optionally adapted) DiT; records no graph.
class DiTPredictor final : public NoisePredictor {
 public:
  explicit DiTPredictor(const DiTParameters<float>& params,
                        const LoraWeights<float>* lora = nullptr)
      : params_(params), lora_(lora) {}

  Tensor<float> predict(const Tensor<float>& x_t, std::span<const int> t,
                        const TextBatch& text) override;
  std::size_t vocab_size() const override { return params_.config().vocab_size; }
  std::size_t text_length() const override { return params_.config().text_len; }

 private:
  const DiTParameters<float>& params_;
  const LoraWeights<float>* lora_;
};

// s * eps_c + (1 - s) * eps_u from exactly two forwards; equal to
// eps_u + s (eps_c - eps_u), and exact at s = 0 and s = 1.
Tensor<float> cfg_predict(NoisePredictor& model, const Tensor<float>& x_t, std::span<const int> t,
                          const TextBatch& cond, const TextBatch& uncond, double s);

// DDIM sampling of one composite from x_T ~ N(0, I) drawn from cfg.seed.
VideoTensor sample(NoisePredictor& model, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                   const TextEmbedding& cond, const VideoShape& composite);

// Independent samples sharing one batched forward per step. Sample b uses
// its own random streams derived from seeds[b]; cfg.seed is ignored.
std::vector<VideoTensor> sample_batch(NoisePredictor& model, const NoiseSchedule& schedule,
                                      const SamplerConfig& cfg, std::span<const TextEmbedding> conds,
                                      std::span<const std::uint64_t> seeds,
                                      const VideoShape& composite);

// Training-free masked sampling. After every step the known region is
// replaced by the known composite noised to the new timestep with fresh
// noise; the final output carries the known composite exactly.
VideoTensor masked_sample(NoisePredictor& model, const NoiseSchedule& schedule,
                          const SamplerConfig& cfg, const TextEmbedding& cond,
                          const PanelSet& panels, const RegionMask& mask);

}  // namespace icv
