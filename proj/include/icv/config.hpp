// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icv/checkpoint.hpp"
#include "icv/dataset.hpp"
#include "icv/diffusion.hpp"
#include "icv/dit.hpp"
#include "icv/lora.hpp"

namespace icv {

inline constexpr int kConfigVersion = 1;

struct TrainSettings {
  std::string mode = "full";  // "full" or "lora"
  std::string base_checkpoint;  // lora mode
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  double grad_clip = 1.0;  // 0 disables
  bool ema = false;
  double prompt_dropout = 0.1;
  std::size_t checkpoint_every = 500;
  // Optional color filter over the dataset (empty keeps every sample).
  std::vector<std::string> colors;
};

struct ProbeSettings {
  std::size_t samples = 32;
  std::size_t batch = 8;
  double threshold = 0.2;
  double radius = 1.0;
};

// Everything a command needs. Parsed from profile defaults, then a config
// file, then command-line overrides.
struct RunConfig {
  int config_version = kConfigVersion;
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::string output_root = "runs";

  ModelConfig model;
  std::size_t schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SamplerConfig sampler;
  LoraSpec lora;
  TrainSettings train;

  std::string data_root = "data";
  std::size_t data_sources = 128;
  SynthParams synth;

  ProbeSettings probe;

  NoiseSchedule schedule() const { return linear_schedule(schedule_steps, beta_start, beta_end); }
  PanelLayout layout() const { return synth.layout(); }
  VideoShape panel_shape() const { return {synth.frames, 3, synth.side, synth.side}; }
  VideoShape composite_shape() const { return layout().composite_shape(panel_shape()); }

  // Throws ConfigError on any inconsistency, including palette names.
  void validate() const;
};

// "desk" (tested default) or "paper" (published training and sampling
// hyperparameters on the desk-sized model).
RunConfig profile_config(const std::string& name);

// Applies one dotted key. Throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// key = value lines; '#' starts a comment. The profile key, if present,
// must come first since it resets every other field.
RunConfig parse_config(const std::string& text, RunConfig base);
RunConfig load_config(const std::filesystem::path& path, RunConfig base);

// Canonical key = value listing of every field; parse_config of it gives
// back an equal configuration.
std::string dump_config(const RunConfig& cfg);
Json config_json(const RunConfig& cfg);

}  // namespace icv
