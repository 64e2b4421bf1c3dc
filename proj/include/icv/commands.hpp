// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "icv/config.hpp"
#include "icv/optim.hpp"

namespace icv {

namespace fs = std::filesystem;

// ---- frame export -----------------------------------------------------------

// Binary PPM (P6) of one frame; v in [-1, 1] maps to round((v + 1) * 127.5).
std::string encode_ppm(const VideoTensor& video, std::size_t frame);
void write_ppm(const fs::path& path, const VideoTensor& video, std::size_t frame);
// Decodes a P6 image back to [-1, 1] channels, [3, H, W].
Tensor<float> read_ppm(const fs::path& path);

// ---- checkpoints ------------------------------------------------------------

// A training checkpoint directory holds `model/` or `lora/`, `optimizer/`
// and `state.json`. Loaders accept either that directory or the bundle itself.
DiTParameters<float> load_model_any(const fs::path& path);
LoraWeights<float> load_lora_any(const fs::path& path, const DiTParameters<float>& base);

void save_optimizer(const fs::path& dir, const AdamW<float>& opt);
void load_optimizer(const fs::path& dir, AdamW<float>& opt);

// ---- commands ---------------------------------------------------------------

struct SynthReport {
  std::size_t samples = 0;
  std::vector<std::string> skipped_sources;
};
// Synthesizes cfg.data_sources sources and exports them under `out`.
SynthReport cmd_synth_data(const RunConfig& cfg, const fs::path& out);

struct TrainOptions {
  std::optional<fs::path> resume;       // checkpoint directory to continue from
  std::optional<std::size_t> stop_after;  // end early after this global step
  std::ostream* log = nullptr;          // progress lines
};

struct TrainResult {
  std::size_t start_step = 0;
  std::size_t end_step = 0;
  std::vector<double> losses;  // one per step run by this call
  fs::path final_checkpoint;
};

// Writes out/train_log.csv, out/run.json, out/checkpoints/step_NNNNNN every
// cfg.train.checkpoint_every steps, and out/final after the last step.
TrainResult cmd_train(const RunConfig& cfg, const fs::path& out, const TrainOptions& options = {});

struct SampleOptions {
  fs::path prompt_file;
  std::optional<fs::path> checkpoint;  // absent: freshly initialized model
  std::optional<fs::path> lora;
};

// Writes composite.bin, panels/panel_K.bin, frames/panel_K/frame_FFF.ppm and
// metadata.json under `out`.
VideoTensor cmd_sample(const RunConfig& cfg, const SampleOptions& options, const fs::path& out);

struct InpaintOptions : SampleOptions {
  fs::path known_dir;  // holds panel_K.bin for every slot that is not generated
  std::set<std::size_t> generate;
};
VideoTensor cmd_inpaint(const RunConfig& cfg, const InpaintOptions& options, const fs::path& out,
                        std::ostream& warnings);

// Splits a composite tensor file and exports panels and frames.
std::vector<VideoTensor> cmd_split(const fs::path& composite_file, const PanelLayout& layout,
                                   const fs::path& out);

struct ProbeOptions {
  std::optional<fs::path> checkpoint;  // absent: freshly initialized model
  std::optional<fs::path> lora;
  bool replay = true;  // also probe the training composites
};

struct ProbeReport {
  std::size_t samples = 0;
  double joint = 0.0;     // all panels of a sample match the prompted color
  double shuffled = 0.0;  // same, with panel k taken from another seed's sample
  std::optional<double> replay;
};

// Color named in a prompt's overall text, or "" when none is recognized.
std::string prompted_color(const PromptSet& prompt);
// Unified probe prompt for a color with panel_count scenes.
PromptSet probe_prompt(const std::string& color, std::size_t panel_count);

ProbeReport cmd_probe_consistency(const RunConfig& cfg, const ProbeOptions& options,
                                  const fs::path& out);

// Summary of a tensor file, bundle, dataset, checkpoint, or sample output.
Json cmd_inspect(const fs::path& path);

}  // namespace icv
