// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace icv {

NoiseSchedule linear_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.betas.resize(steps);
  s.alphas.resize(steps);
  s.alpha_bars.resize(steps);
  double running = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    s.betas[t] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[t] = 1.0 - s.betas[t];
    running *= s.alphas[t];
    s.alpha_bars[t] = running;
  }
  return s;
}

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
  if (steps < 1 || steps > schedule.steps) {
    throw ConfigError("sampling steps must lie in [1, " + std::to_string(schedule.steps) + "], got " +
                      std::to_string(steps));
  }
  if (!(guidance >= 0.0) || !std::isfinite(guidance)) throw ConfigError("guidance scale must be >= 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be >= 0");
}

std::vector<int> sampling_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1 || steps > T) throw ConfigError("sampling steps must lie in [1, T]");
  if (steps == 1) return {static_cast<int>(T - 1)};
  std::vector<int> out;
  out.reserve(steps);
  for (std::size_t i = steps; i-- > 0;) {
    out.push_back(static_cast<int>(i * (T - 1) / (steps - 1)));
  }
  return out;
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 0 || static_cast<std::size_t>(t) >= s.steps) {
    throw BoundsError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps) + ")");
  }
}

}  // namespace

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  check_t(t, schedule);
  if (x0.shape() != eps.shape()) {
    throw DimensionError("q_sample shapes differ: " + shape_str(x0.shape()) + " vs " +
                         shape_str(eps.shape()));
  }
  const double a = std::sqrt(schedule.alpha_bars[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bars[t]);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(a * static_cast<double>(x0[i]) + b * static_cast<double>(eps[i]));
  }
  return out;
}

template <typename T>
Tensor<T> q_sample_batch(const Tensor<T>& x0, std::span<const int> t, const Tensor<T>& eps,
                         const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw DimensionError("q_sample shapes differ");
  if (x0.rank() == 0 || x0.dim(0) != t.size()) {
    throw DimensionError("need one timestep per leading slice");
  }
  const std::size_t per = x0.numel() / t.size();
  Tensor<T> out(x0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    check_t(t[b], schedule);
    const double a = std::sqrt(schedule.alpha_bars[t[b]]);
    const double s = std::sqrt(1.0 - schedule.alpha_bars[t[b]]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<T>(a * static_cast<double>(x0[i]) + s * static_cast<double>(eps[i]));
    }
  }
  return out;
}

template <typename T>
TrainBatch<T> make_batch(Tensor<T> x0, std::vector<TextEmbedding> texts,
                         const NoiseSchedule& schedule, Rng& rng, double dropout) {
  if (x0.rank() != 5) throw DimensionError("training batch expects [B, F, C, H, W]");
  const std::size_t b = x0.dim(0);
  if (texts.size() != b) {
    throw DimensionError(std::to_string(texts.size()) + " texts for a batch of " + std::to_string(b));
  }
  TrainBatch<T> batch;
  batch.timesteps.resize(b);
  batch.dropped.resize(b);
  for (auto& t : batch.timesteps) t = static_cast<int>(rng.below(schedule.steps));
  for (auto& d : batch.dropped) d = rng.bernoulli(dropout) ? 1 : 0;
  batch.noise = Tensor<T>(x0.shape());
  rng.fill_normal(batch.noise.data());
  batch.x0 = std::move(x0);
  batch.texts = std::move(texts);
  return batch;
}

template <typename T>
Var<T> training_loss(const ModelFn<T>& model, const TrainBatch<T>& batch,
                     const NoiseSchedule& schedule) {
  if (batch.texts.size() != batch.size() || batch.dropped.size() != batch.size() ||
      batch.x0.shape() != batch.noise.shape()) {
    throw DimensionError("malformed training batch");
  }
  const Tensor<T> x_t = q_sample_batch(batch.x0, batch.timesteps, batch.noise, schedule);
  std::vector<TextEmbedding> texts = batch.texts;
  for (std::size_t b = 0; b < texts.size(); ++b) {
    if (batch.dropped[b]) texts[b] = null_tokens(texts[b].length());
  }
  const Var<T> pred = model(x_t, batch.timesteps, TextBatch::from(texts));
  Var<T> loss = mse_loss(pred, batch.noise);
  if (!std::isfinite(static_cast<double>(loss.value().item()))) {
    std::ostringstream msg;
    msg << "non-finite training loss; batch of " << batch.size() << ", timesteps";
    for (int t : batch.timesteps) msg << ' ' << t;
    msg << ", dropped";
    for (auto d : batch.dropped) msg << ' ' << int(d);
    throw NumericError(msg.str());
  }
  return loss;
}

template <typename T>
Var<T> training_loss(const DiTParameters<T>& params, const TrainBatch<T>& batch,
                     const NoiseSchedule& schedule, const LoraWeights<T>* lora) {
  const ModelFn<T> fn = [&](const Tensor<T>& x, std::span<const int> t, const TextBatch& text) {
    return dit_forward(params, x, t, text, lora);
  };
  return training_loss(fn, batch, schedule);
}

Tensor<float> DiTPredictor::predict(const Tensor<float>& x_t, std::span<const int> t,
                                    const TextBatch& text) {
  NoGradGuard guard;
  return dit_forward(params_, x_t, t, text, lora_).value();
}

Tensor<float> cfg_predict(NoisePredictor& model, const Tensor<float>& x_t, std::span<const int> t,
                          const TextBatch& cond, const TextBatch& uncond, double s) {
  const Tensor<float> ec = model.predict(x_t, t, cond);
  const Tensor<float> eu = model.predict(x_t, t, uncond);
  if (ec.shape() != eu.shape()) throw DimensionError("conditional and null predictions differ in shape");
  const float wc = static_cast<float>(s);
  const float wu = static_cast<float>(1.0 - s);
  Tensor<float> out(ec.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = wc * ec[i] + wu * eu[i];
  return out;
}

namespace {

struct Known {
  const Tensor<float>* composite;  // [F, C, H, W]
  const Tensor<float>* mask;
};

// Sampler core over B independent samples. `known` applies to a batch of one.
std::vector<VideoTensor> run_sampler(NoisePredictor& model, const NoiseSchedule& schedule,
                                     const SamplerConfig& cfg,
                                     std::span<const TextEmbedding> conds,
                                     std::span<const std::uint64_t> seeds,
                                     const VideoShape& composite, const Known* known) {
  cfg.validate(schedule);
  const std::size_t batch = conds.size();
  if (batch == 0 || seeds.size() != batch) throw DimensionError("need one seed per prompt");
  const std::size_t per = shape_numel(composite.dims());
  const Shape shape{batch, composite.frames, composite.channels, composite.height, composite.width};

  std::vector<Rng> noise_rng, blend_rng;
  for (auto seed : seeds) {
    noise_rng.emplace_back(mix_seed(seed, 1));
    blend_rng.emplace_back(mix_seed(seed, 2));
  }
  Tensor<float> x(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    noise_rng[b].fill_normal(std::span<float>(x.ptr() + b * per, per));
  }

  const TextBatch cond = TextBatch::from(conds);
  std::vector<TextEmbedding> nulls(batch, model.null_tokens());
  const TextBatch uncond = TextBatch::from(nulls);

  const std::vector<int> ts = sampling_timesteps(schedule.steps, cfg.steps);
  Tensor<float> fresh({per});
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const std::vector<int> tb(batch, t);
    const Tensor<float> eps = cfg_predict(model, x, tb, cond, uncond, cfg.guidance);
    const double ab = schedule.alpha_bars[t];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const bool last = k + 1 == ts.size();
    if (last) {
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double x0 = (static_cast<double>(x[i]) - sb * eps[i]) / sa;
        x[i] = static_cast<float>(cfg.clip ? std::clamp(x0, -1.0, 1.0) : x0);
      }
    } else {
      const int tn = ts[k + 1];
      const double abn = schedule.alpha_bars[tn];
      const double sigma =
          cfg.eta * std::sqrt((1.0 - abn) / (1.0 - ab) * (1.0 - ab / abn));
      const double dir = std::sqrt(std::max(0.0, 1.0 - abn - sigma * sigma));
      const double san = std::sqrt(abn);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
          double x0 = (static_cast<double>(x[i]) - sb * eps[i]) / sa;
          double e = eps[i];
          if (cfg.clip && (x0 < -1.0 || x0 > 1.0)) {
            x0 = std::clamp(x0, -1.0, 1.0);
            e = (static_cast<double>(x[i]) - sa * x0) / sb;
          }
          double next = san * x0 + dir * e;
          if (sigma > 0.0) next += sigma * noise_rng[b].normal();
          x[i] = static_cast<float>(next);
        }
      }
      if (known) {
        blend_rng[0].fill_normal(fresh.data());
        const double ka = std::sqrt(abn), kb = std::sqrt(1.0 - abn);
        const Tensor<float>& kc = *known->composite;
        const Tensor<float>& m = *known->mask;
        for (std::size_t i = 0; i < per; ++i) {
          if (!(m[i] > 0.5f)) {
            x[i] = static_cast<float>(ka * static_cast<double>(kc[i]) + kb * static_cast<double>(fresh[i]));
          }
        }
      }
    }
  }
  if (known) {
    const Tensor<float>& m = *known->mask;
    for (std::size_t i = 0; i < per; ++i) {
      if (!(m[i] > 0.5f)) x[i] = (*known->composite)[i];
    }
  }

  std::vector<VideoTensor> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor<float> v(composite.dims());
    std::copy_n(x.ptr() + b * per, per, v.ptr());
    out.emplace_back(std::move(v));
  }
  return out;
}

}  // namespace

VideoTensor sample(NoisePredictor& model, const NoiseSchedule& schedule, const SamplerConfig& cfg,
                   const TextEmbedding& cond, const VideoShape& composite) {
  const std::uint64_t seed = cfg.seed;
  return run_sampler(model, schedule, cfg, std::span<const TextEmbedding>(&cond, 1),
                     std::span<const std::uint64_t>(&seed, 1), composite, nullptr)
      .front();
}

std::vector<VideoTensor> sample_batch(NoisePredictor& model, const NoiseSchedule& schedule,
                                      const SamplerConfig& cfg, std::span<const TextEmbedding> conds,
                                      std::span<const std::uint64_t> seeds,
                                      const VideoShape& composite) {
  return run_sampler(model, schedule, cfg, conds, seeds, composite, nullptr);
}

VideoTensor masked_sample(NoisePredictor& model, const NoiseSchedule& schedule,
                          const SamplerConfig& cfg, const TextEmbedding& cond,
                          const PanelSet& panels, const RegionMask& mask) {
  const Tensor<float>& m = mask.values();
  if (m.rank() != 4) throw DimensionError("mask must be [F, C, H, W]");
  const VideoShape composite{m.dim(0), m.dim(1), m.dim(2), m.dim(3)};
  const VideoShape panel = panels.layout.panel_shape(composite);
  if (panels.panels.size() != panels.layout.panel_count()) {
    throw ValidationError("panel set has " + std::to_string(panels.panels.size()) +
                          " slots, layout needs " + std::to_string(panels.layout.panel_count()));
  }
  for (std::size_t k : panels.missing_indices()) {
    const PanelRegion r = panel_region(panels.layout, k, panel);
    for (std::size_t f = r.frame_begin; f < r.frame_end; ++f) {
      for (std::size_t c = 0; c < composite.channels; ++c) {
        for (std::size_t y = r.row_begin; y < r.row_end; ++y) {
          for (std::size_t x = r.col_begin; x < r.col_end; ++x) {
            const std::size_t i = ((f * composite.channels + c) * composite.height + y) * composite.width + x;
            if (!mask.generate_at(i)) {
              throw ValidationError("panel " + std::to_string(k) +
                                    " is not generated but no conditional panel was supplied");
            }
          }
        }
      }
    }
  }
  const VideoTensor known_composite = panels.known_composite(panel);
  if (known_composite.shape() != composite) {
    throw DimensionError("known composite " + to_string(known_composite.shape()) +
                         " does not match mask " + to_string(composite));
  }
  const Known known{&known_composite.values(), &m};
  const std::uint64_t seed = cfg.seed;
  return run_sampler(model, schedule, cfg, std::span<const TextEmbedding>(&cond, 1),
                     std::span<const std::uint64_t>(&seed, 1), composite, &known)
      .front();
}

#define ICV_INSTANTIATE_DIFFUSION(T)                                                             \
  template Tensor<T> q_sample(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&);    \
  template Tensor<T> q_sample_batch(const Tensor<T>&, std::span<const int>, const Tensor<T>&,    \
                                    const NoiseSchedule&);                                       \
  template TrainBatch<T> make_batch(Tensor<T>, std::vector<TextEmbedding>, const NoiseSchedule&, \
                                    Rng&, double);                                               \
  template Var<T> training_loss(const ModelFn<T>&, const TrainBatch<T>&, const NoiseSchedule&);  \
  template Var<T> training_loss(const DiTParameters<T>&, const TrainBatch<T>&,                   \
                                const NoiseSchedule&, const LoraWeights<T>*);

ICV_INSTANTIATE_DIFFUSION(float)
ICV_INSTANTIATE_DIFFUSION(double)

}  // namespace icv
