// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "icv/rng.hpp"
#include "icv/serialize.hpp"

namespace icv {

// ---- frame export -----------------------------------------------------------

std::string encode_ppm(const VideoTensor& video, std::size_t frame) {
  if (video.channels() != 3) throw DimensionError("PPM export needs 3 channels");
  if (frame >= video.frames()) throw BoundsError("frame " + std::to_string(frame) + " out of range");
  std::string out = "P6\n" + std::to_string(video.width()) + " " + std::to_string(video.height()) + "\n255\n";
  out.reserve(out.size() + 3 * video.width() * video.height());
  for (std::size_t y = 0; y < video.height(); ++y) {
    for (std::size_t x = 0; x < video.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp<double>(video.at(frame, c, y, x), -1.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
      }
    }
  }
  return out;
}

void write_ppm(const fs::path& path, const VideoTensor& video, std::size_t frame) {
  write_file_atomic(path, encode_ppm(video, frame));
}

Tensor<float> read_ppm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || !in || maxval != 255 || w == 0 || h == 0) {
    throw CorruptFileError(path.string() + ": not an 8-bit P6 image");
  }
  const std::size_t offset = static_cast<std::size_t>(in.tellg()) + 1;
  if (bytes.size() != offset + 3 * w * h) throw CorruptFileError(path.string() + ": truncated pixel data");
  Tensor<float> out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const auto byte = static_cast<unsigned char>(bytes[offset + (y * w + x) * 3 + c]);
        out[(c * h + y) * w + x] = static_cast<float>(byte / 127.5 - 1.0);
      }
    }
  }
  return out;
}

// ---- checkpoints ------------------------------------------------------------

DiTParameters<float> load_model_any(const fs::path& path) {
  if (fs::exists(path / "model" / "manifest.json")) return load_model<float>(path / "model");
  return load_model<float>(path);
}

LoraWeights<float> load_lora_any(const fs::path& path, const DiTParameters<float>& base) {
  if (fs::exists(path / "lora" / "manifest.json")) return load_lora<float>(path / "lora", base);
  return load_lora<float>(path, base);
}

void save_optimizer(const fs::path& dir, const AdamW<float>& opt) {
  TensorBundle<float> b;
  b.kind = "optimizer";
  Json names = Json::array();
  for (const auto& s : opt.slots()) {
    names.push_back(s.name);
    b.tensors.emplace_back(s.name + ".m", s.m);
    b.tensors.emplace_back(s.name + ".v", s.v);
  }
  b.meta = {{"step", opt.step_count()}, {"slots", names}};
  save_bundle(dir, b);
}

void load_optimizer(const fs::path& dir, AdamW<float>& opt) {
  const auto b = load_bundle<float>(dir, "optimizer");
  std::vector<std::string> names;
  std::int64_t step = 0;
  try {
    names = b.meta.at("slots").get<std::vector<std::string>>();
    step = b.meta.at("step").get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw CorruptFileError(dir.string() + ": " + e.what());
  }
  auto& slots = opt.slots();
  if (names.size() != slots.size()) throw StructureError("optimizer state does not match the trainable set");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (names[i] != slots[i].name) {
      throw StructureError("optimizer slot '" + names[i] + "' where '" + slots[i].name + "' expected");
    }
    const auto& m = b.at(names[i] + ".m");
    const auto& v = b.at(names[i] + ".v");
    if (m.shape() != slots[i].param.shape() || v.shape() != slots[i].param.shape()) {
      throw StructureError("optimizer moments for '" + names[i] + "' have the wrong shape");
    }
    slots[i].m = m;
    slots[i].v = v;
  }
  opt.set_step_count(step);
}

namespace {

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu", step);
  return buf;
}

fs::path staging_for(const fs::path& dir) {
  fs::path s = dir;
  s += ".staging";
  fs::remove_all(s);
  fs::create_directories(s);
  return s;
}

Json sampler_json(const RunConfig& cfg) {
  return {{"steps", cfg.sampler.steps},
          {"guidance", cfg.sampler.guidance},
          {"eta", cfg.sampler.eta},
          {"schedule_steps", cfg.schedule_steps},
          {"beta_start", cfg.beta_start},
          {"beta_end", cfg.beta_end}};
}

// Panels, frames and the composite, staged and renamed into `out`.
void export_panels(const VideoTensor& composite, const PanelLayout& layout, const fs::path& out,
                   const Json& metadata) {
  const fs::path stage = staging_for(out);
  fs::create_directories(stage / "panels");
  save_tensor(stage / "composite.bin", composite.values());
  const auto panels = split_panels(composite, layout);
  for (std::size_t k = 0; k < panels.size(); ++k) {
    save_tensor(stage / "panels" / ("panel_" + std::to_string(k) + ".bin"), panels[k].values());
    const fs::path frames = stage / "frames" / ("panel_" + std::to_string(k));
    fs::create_directories(frames);
    for (std::size_t f = 0; f < panels[k].frames(); ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.ppm", f);
      write_ppm(frames / name, panels[k], f);
    }
  }
  if (!metadata.is_null()) write_json(stage / "metadata.json", metadata);
  commit_directory(stage, out);
}

PromptSet read_prompt_file(const fs::path& path, const PanelLayout& layout) {
  if (!fs::exists(path)) throw ValidationError("prompt file not found: " + path.string());
  std::string text = read_file(path);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  PromptSet p = parse_prompt(text);
  if (p.per_panel.size() != layout.panel_count()) {
    throw ValidationError("prompt has " + std::to_string(p.per_panel.size()) + " scenes, layout " +
                          to_string(layout) + " has " + std::to_string(layout.panel_count()) +
                          " panels");
  }
  return p;
}

struct LoadedModel {
  DiTParameters<float> params;
  std::optional<LoraWeights<float>> lora;
};

LoadedModel load_for_inference(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                               const std::optional<fs::path>& lora) {
  LoadedModel m{checkpoint ? load_model_any(*checkpoint) : init_params<float>(cfg.model, cfg.seed),
                std::nullopt};
  m.params.set_trainable(false);
  if (lora) m.lora = load_lora_any(*lora, m.params);
  const ModelConfig& mc = m.params.config();
  const VideoShape comp = cfg.composite_shape();
  patch_grid(mc, comp.frames, comp.height, comp.width);
  if (mc.timesteps != cfg.schedule_steps) {
    throw ConfigError("checkpoint was trained with " + std::to_string(mc.timesteps) +
                      " diffusion steps, config has " + std::to_string(cfg.schedule_steps));
  }
  return m;
}

Json inference_metadata(const RunConfig& cfg, const std::string& command, const PromptSet& prompt,
                        const SampleOptions& options) {
  return {{"command", command},
          {"config", config_json(cfg)},
          {"seed", cfg.seed},
          {"prompt", compose_prompt(prompt)},
          {"layout", to_string(cfg.layout())},
          {"panel_shape", to_string(cfg.panel_shape())},
          {"checkpoint", options.checkpoint ? options.checkpoint->string() : std::string()},
          {"lora", options.lora ? options.lora->string() : std::string()},
          {"sampler", sampler_json(cfg)}};
}

}  // namespace

// ---- synth-data -------------------------------------------------------------

SynthReport cmd_synth_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  SynthParams params = cfg.synth;
  params.seed = cfg.seed;
  const auto clips = synth_generate(params, cfg.data_sources);
  BuildReport build;
  const auto samples = build_set_samples(clips, params.layout(), &build);
  const Json meta = {{"generator", "synthetic-sprites"},
                     {"seed", cfg.seed},
                     {"sources", cfg.data_sources},
                     {"side", params.side},
                     {"frames", params.frames},
                     {"sprite", params.sprite},
                     {"palette", params.palette},
                     {"panels", params.panels},
                     {"layout", to_string(params.layout())},
                     {"skipped_sources", build.skipped_sources}};
  export_dataset(samples, out, meta);
  return {samples.size(), build.skipped_sources};
}

// ---- train ------------------------------------------------------------------

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(mix_seed(seed, 0xda7a), epoch));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  return order;
}

void save_checkpoint(const fs::path& dir, const RunConfig& cfg, const DiTParameters<float>& params,
                     const LoraWeights<float>* lora, const AdamW<float>& opt, std::size_t step) {
  const fs::path stage = staging_for(dir);
  if (lora) {
    save_lora(stage / "lora", *lora);
  } else {
    save_model(stage / "model", params);
  }
  save_optimizer(stage / "optimizer", opt);
  write_json(stage / "state.json", {{"step", step},
                                    {"seed", cfg.seed},
                                    {"mode", cfg.train.mode},
                                    {"base_checkpoint", cfg.train.base_checkpoint},
                                    {"config", config_json(cfg)}});
  commit_directory(stage, dir);
}

std::string format_log_row(std::size_t step, double loss, double lr, double seconds) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.3f\n", step, loss, lr, seconds);
  return buf;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out, const TrainOptions& options) {
  cfg.validate();
  auto samples = import_dataset(cfg.data_root);
  if (!cfg.train.colors.empty()) {
    std::erase_if(samples, [&](const SetSample& s) {
      const std::string c = prompted_color(s.prompt);
      return std::find(cfg.train.colors.begin(), cfg.train.colors.end(), c) == cfg.train.colors.end();
    });
  }
  if (samples.empty()) throw ValidationError("no training samples in " + cfg.data_root);
  const VideoShape comp = samples.front().composite.shape();
  for (const auto& s : samples) {
    if (s.composite.shape() != comp) throw ValidationError("sample '" + s.id + "' has a different shape");
  }

  const bool lora_mode = cfg.train.mode == "lora";
  std::optional<Json> resume_state;
  if (options.resume) {
    resume_state = read_json(*options.resume / "state.json");
    const std::string mode = resume_state->at("mode").get<std::string>();
    if (mode != cfg.train.mode) throw ConfigError("checkpoint was written in " + mode + " mode");
  }
  DiTParameters<float> params;
  std::optional<LoraWeights<float>> lora;
  if (lora_mode) {
    if (cfg.train.base_checkpoint.empty()) throw ConfigError("train.mode = lora needs train.base_checkpoint");
    params = load_model_any(cfg.train.base_checkpoint);
    params.set_trainable(false);
    lora = options.resume ? load_lora_any(*options.resume, params)
                          : inject(params, cfg.lora, cfg.seed);
  } else {
    params = options.resume ? load_model_any(*options.resume) : init_params<float>(cfg.model, cfg.seed);
    params.set_trainable(true);
    if (params.config() != cfg.model) throw StructureError("checkpoint model config differs from the run config");
  }
  const ModelConfig& mc = params.config();
  patch_grid(mc, comp.frames, comp.height, comp.width);
  const NoiseSchedule schedule = cfg.schedule();
  if (mc.timesteps != schedule.steps) throw ConfigError("model and schedule disagree on T");

  std::vector<TextEmbedding> texts;
  texts.reserve(samples.size());
  for (const auto& s : samples) texts.push_back(text_tokens(compose_prompt(s.prompt), mc.vocab_size, mc.text_len));

  auto trainable = lora ? lora->named_parameters() : params.entries();
  AdamW<float> opt(trainable, AdamWConfig{cfg.train.lr, cfg.train.beta1, cfg.train.beta2,
                                          cfg.train.eps, cfg.train.weight_decay});
  std::size_t start = 0;
  if (options.resume) {
    load_optimizer(*options.resume / "optimizer", opt);
    start = resume_state->at("step").get<std::size_t>();
  }

  fs::create_directories(out);
  write_json(out / "run.json", {{"command", "train"},
                                {"config", config_json(cfg)},
                                {"seed", cfg.seed},
                                {"dataset", cfg.data_root},
                                {"samples", samples.size()},
                                {"resumed_from", options.resume ? options.resume->string() : ""},
                                {"parameters", params.parameter_count()},
                                {"trainable", [&] {
                                   std::size_t n = 0;
                                   for (const auto& [name, v] : trainable) n += v.numel();
                                   return n;
                                 }()}});

  // The log keeps exactly one row per completed step.
  const fs::path log_path = out / "train_log.csv";
  std::string log_text = "step,loss,lr,seconds\n";
  if (options.resume && fs::exists(log_path)) {
    std::istringstream old(read_file(log_path));
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= start) log_text += line + "\n";
    }
  }
  write_file_atomic(log_path, log_text);
  std::ofstream log_file(log_path, std::ios::app | std::ios::binary);

  const std::size_t total = std::min(cfg.train.steps, options.stop_after.value_or(cfg.train.steps));
  const std::size_t n = samples.size(), bsz = cfg.train.batch_size;
  const Shape one = comp.dims();
  const std::size_t per = shape_numel(one);
  std::map<std::size_t, std::vector<std::size_t>> orders;
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.start_step = start;
  for (std::size_t step = start; step < total; ++step) {
    Tensor<float> x0({bsz, comp.frames, comp.channels, comp.height, comp.width});
    std::vector<TextEmbedding> batch_text;
    for (std::size_t j = 0; j < bsz; ++j) {
      const std::size_t pos = step * bsz + j;
      const std::size_t epoch = pos / n;
      auto it = orders.find(epoch);
      if (it == orders.end()) {
        orders.clear();
        it = orders.emplace(epoch, epoch_order(cfg.seed, epoch, n)).first;
      }
      const std::size_t idx = it->second[pos % n];
      std::copy_n(samples[idx].composite.values().ptr(), per, x0.ptr() + j * per);
      batch_text.push_back(texts[idx]);
    }
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x57e9), step));
    const auto batch = make_batch(std::move(x0), std::move(batch_text), schedule, rng,
                                  cfg.train.prompt_dropout);
    Var<float> loss;
    try {
      loss = training_loss(params, batch, schedule, lora ? &*lora : nullptr);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
    }
    backward(loss);
    if (cfg.train.grad_clip > 0.0) opt.clip_grad_norm(cfg.train.grad_clip);
    const double warm = cfg.train.warmup_steps == 0
                            ? 1.0
                            : std::min(1.0, static_cast<double>(step + 1) /
                                                static_cast<double>(cfg.train.warmup_steps));
    const double lr = cfg.train.lr * warm;
    opt.step(lr);
    opt.zero_grad();

    const double value = loss.value().item();
    result.losses.push_back(value);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_file << format_log_row(step + 1, value, lr, secs);
    log_file.flush();
    if (options.log && ((step + 1) % 100 == 0 || step + 1 == total)) {
      *options.log << "step " << step + 1 << "/" << total << " loss " << value << " lr " << lr
                   << " (" << secs << " s)\n";
    }
    if ((step + 1) % cfg.train.checkpoint_every == 0) {
      save_checkpoint(out / "checkpoints" / step_name(step + 1), cfg, params, lora ? &*lora : nullptr,
                      opt, step + 1);
    }
  }
  result.end_step = std::max(start, total);
  result.final_checkpoint = out / "final";
  save_checkpoint(result.final_checkpoint, cfg, params, lora ? &*lora : nullptr, opt, result.end_step);
  return result;
}

// ---- sample / inpaint / split -------------------------------------------------

VideoTensor cmd_sample(const RunConfig& cfg, const SampleOptions& options, const fs::path& out) {
  cfg.validate();
  const PanelLayout layout = cfg.layout();
  const PromptSet prompt = read_prompt_file(options.prompt_file, layout);
  LoadedModel m = load_for_inference(cfg, options.checkpoint, options.lora);
  DiTPredictor predictor(m.params, m.lora ? &*m.lora : nullptr);
  SamplerConfig sc = cfg.sampler;
  sc.seed = cfg.seed;
  const VideoTensor composite = sample(predictor, cfg.schedule(), sc,
                                       predictor.tokens(compose_prompt(prompt)),
                                       cfg.composite_shape());
  export_panels(composite, layout, out, inference_metadata(cfg, "sample", prompt, options));
  return composite;
}

VideoTensor cmd_inpaint(const RunConfig& cfg, const InpaintOptions& options, const fs::path& out,
                        std::ostream& warnings) {
  cfg.validate();
  const PanelLayout layout = cfg.layout();
  const VideoShape panel = cfg.panel_shape();
  for (std::size_t k : options.generate) {
    if (k >= layout.panel_count()) {
      throw BoundsError("generate index " + std::to_string(k) + " outside [0, " +
                        std::to_string(layout.panel_count()) + ")");
    }
  }
  PanelSet set{layout, std::vector<std::optional<VideoTensor>>(layout.panel_count())};
  for (std::size_t k = 0; k < layout.panel_count(); ++k) {
    if (options.generate.count(k)) continue;
    const fs::path file = options.known_dir / ("panel_" + std::to_string(k) + ".bin");
    if (!fs::exists(file)) throw ValidationError("missing known panel " + std::to_string(k) + ": " + file.string());
    VideoTensor v(load_tensor<float>(file));
    if (v.values().rank() != 4 || v.shape() != panel) {
      throw DimensionError("known panel " + std::to_string(k) + " has shape " +
                           shape_str(v.values().shape()) + ", expected " + to_string(panel));
    }
    set.panels[k] = std::move(v);
  }
  const PromptSet prompt = read_prompt_file(options.prompt_file, layout);
  Json meta = inference_metadata(cfg, "inpaint", prompt, options);
  meta["generate"] = std::vector<std::size_t>(options.generate.begin(), options.generate.end());
  meta["known_dir"] = options.known_dir.string();

  if (options.generate.empty()) {
    warnings << "warning: nothing to generate; output equals the known panels\n";
    const VideoTensor composite = set.known_composite(panel);
    export_panels(composite, layout, out, meta);
    return composite;
  }
  LoadedModel m = load_for_inference(cfg, options.checkpoint, options.lora);
  DiTPredictor predictor(m.params, m.lora ? &*m.lora : nullptr);
  SamplerConfig sc = cfg.sampler;
  sc.seed = cfg.seed;
  const RegionMask mask = build_mask(layout, options.generate, panel);
  const VideoTensor composite = masked_sample(predictor, cfg.schedule(), sc,
                                              predictor.tokens(compose_prompt(prompt)), set, mask);
  export_panels(composite, layout, out, meta);
  return composite;
}

std::vector<VideoTensor> cmd_split(const fs::path& composite_file, const PanelLayout& layout,
                                   const fs::path& out) {
  Tensor<float> values = load_tensor<float>(composite_file);
  if (values.rank() != 4) throw DimensionError(composite_file.string() + " is not a [F, C, H, W] tensor");
  const VideoTensor composite(std::move(values));
  export_panels(composite, layout, out,
                {{"command", "split"}, {"input", composite_file.string()}, {"layout", to_string(layout)}});
  return split_panels(composite, layout);
}

// ---- probe-consistency ----------------------------------------------------------

std::string prompted_color(const PromptSet& prompt) {
  std::istringstream words(prompt.overall);
  std::string w;
  while (words >> w) {
    if (find_color(w)) return w;
  }
  return "";
}

PromptSet probe_prompt(const std::string& color, std::size_t panel_count) {
  static const char* dirs[] = {"up", "down", "left", "right"};
  PromptSet p;
  p.overall = overall_caption(color + " square");
  for (std::size_t k = 0; k < panel_count; ++k) {
    p.per_panel.push_back("a " + color + " square moving " + dirs[k % 4]);
  }
  return p;
}

ProbeReport cmd_probe_consistency(const RunConfig& cfg, const ProbeOptions& options,
                                  const fs::path& out) {
  cfg.validate();
  const PanelLayout layout = cfg.layout();
  const std::size_t panels = layout.panel_count();
  const auto palette = resolve_palette(cfg.synth.palette);
  std::vector<PaletteColor> probe_palette = palette;

  LoadedModel m = load_for_inference(cfg, options.checkpoint, options.lora);
  DiTPredictor predictor(m.params, m.lora ? &*m.lora : nullptr);
  const NoiseSchedule schedule = cfg.schedule();

  const std::size_t n = cfg.probe.samples;
  std::vector<std::string> colors(n);
  std::vector<TextEmbedding> conds(n);
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) {
    colors[i] = palette[i % palette.size()].name;
    conds[i] = predictor.tokens(compose_prompt(probe_prompt(colors[i], panels)));
    seeds[i] = mix_seed(cfg.seed, 0x9b0be + i);
  }
  std::vector<std::vector<std::string>> found(n);
  for (std::size_t b = 0; b < n; b += cfg.probe.batch) {
    const std::size_t e = std::min(n, b + cfg.probe.batch);
    const auto out_batch = sample_batch(predictor, schedule, cfg.sampler,
                                        std::span<const TextEmbedding>(conds).subspan(b, e - b),
                                        std::span<const std::uint64_t>(seeds).subspan(b, e - b),
                                        cfg.composite_shape());
    for (std::size_t i = b; i < e; ++i) {
      for (const auto& p : split_panels(out_batch[i - b], layout)) {
        found[i].push_back(dominant_color_probe(p, probe_palette, cfg.probe.threshold, cfg.probe.radius));
      }
    }
  }

  std::string rows = "mode,index,color";
  for (std::size_t k = 0; k < panels; ++k) rows += ",panel_" + std::to_string(k);
  rows += ",agree\n";
  auto emit = [&](const std::string& mode, std::size_t i, const std::string& color,
                  const std::vector<std::string>& got) {
    bool agree = !color.empty();
    rows += mode + "," + std::to_string(i) + "," + color;
    for (const auto& g : got) {
      rows += "," + g;
      agree = agree && g == color;
    }
    rows += agree ? ",1\n" : ",0\n";
    return agree;
  };

  ProbeReport report;
  report.samples = n;
  std::size_t joint = 0, shuffled = 0;
  for (std::size_t i = 0; i < n; ++i) joint += emit("joint", i, colors[i], found[i]);
  // Panel k of the control comes from the k-th next sample with the same
  // prompt, i.e. from an independently seeded run.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[colors[i]].push_back(i);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = groups[colors[i]];
    const std::size_t j = static_cast<std::size_t>(std::find(g.begin(), g.end(), i) - g.begin());
    std::vector<std::string> got;
    for (std::size_t k = 0; k < panels; ++k) got.push_back(found[g[(j + k) % g.size()]][k]);
    shuffled += emit("shuffled", i, colors[i], got);
  }
  report.joint = static_cast<double>(joint) / static_cast<double>(n);
  report.shuffled = static_cast<double>(shuffled) / static_cast<double>(n);

  std::size_t replay_n = 0, replay_ok = 0;
  if (options.replay && fs::exists(fs::path(cfg.data_root) / "manifest.json")) {
    for (const auto& s : import_dataset(cfg.data_root)) {
      std::vector<std::string> got;
      for (const auto& p : split_panels(s.composite, s.layout)) {
        got.push_back(dominant_color_probe(p, probe_palette, cfg.probe.threshold, cfg.probe.radius));
      }
      replay_ok += emit("replay", replay_n++, prompted_color(s.prompt), got);
    }
    if (replay_n) report.replay = static_cast<double>(replay_ok) / static_cast<double>(replay_n);
  }

  std::string summary = "mode,samples,agreeing,fraction\n";
  auto line = [&](const std::string& mode, std::size_t total, std::size_t ok) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f\n", mode.c_str(), total, ok,
                  total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0);
    summary += buf;
  };
  line("joint", n, joint);
  line("shuffled", n, shuffled);
  if (report.replay) line("replay", replay_n, replay_ok);

  const fs::path stage = staging_for(out);
  write_file_atomic(stage / "consistency.csv", rows);
  write_file_atomic(stage / "summary.csv", summary);
  SampleOptions so{{}, options.checkpoint, options.lora};
  write_json(stage / "metadata.json", {{"command", "probe-consistency"},
                                       {"config", config_json(cfg)},
                                       {"seed", cfg.seed},
                                       {"checkpoint", so.checkpoint ? so.checkpoint->string() : ""},
                                       {"lora", so.lora ? so.lora->string() : ""},
                                       {"sampler", sampler_json(cfg)},
                                       {"joint", report.joint},
                                       {"shuffled", report.shuffled},
                                       {"replay", report.replay ? Json(*report.replay) : Json()}});
  commit_directory(stage, out);
  return report;
}

// ---- inspect ----------------------------------------------------------------------

namespace {

Json tensor_summary(const fs::path& file) {
  const DType dt = peek_tensor_dtype(file);
  const Tensor<double> t = load_tensor<double>(file);
  double lo = t.numel() ? t[0] : 0, hi = lo, sum = 0;
  for (double v : t.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  return {{"kind", "tensor"},
          {"path", file.string()},
          {"dtype", dtype_name(dt)},
          {"shape", t.shape()},
          {"min", lo},
          {"max", hi},
          {"mean", t.numel() ? sum / static_cast<double>(t.numel()) : 0.0}};
}

}  // namespace

Json cmd_inspect(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("nothing at " + path.string());
  if (fs::is_regular_file(path)) {
    if (path.extension() == ".json") return read_json(path);
    return tensor_summary(path);
  }
  if (fs::exists(path / "state.json")) {
    Json j = read_json(path / "state.json");
    j["kind"] = "checkpoint";
    for (const char* sub : {"model", "lora"}) {
      if (fs::exists(path / sub / "manifest.json")) {
        const Json man = load_bundle_manifest(path / sub);
        j[sub] = {{"tensors", man.at("tensors").size()}, {"meta", man.at("meta")}};
      }
    }
    return j;
  }
  if (fs::exists(path / "manifest.json")) {
    const Json man = read_json(path / "manifest.json");
    if (man.contains("samples")) {
      const auto samples = import_dataset(path);
      return {{"kind", "dataset"},
              {"format_version", man.at("format_version")},
              {"samples", samples.size()},
              {"meta", man.value("meta", Json::object())},
              {"first_prompt", samples.empty() ? "" : compose_prompt(samples.front().prompt)}};
    }
    const Json bundle = load_bundle_manifest(path);
    std::size_t count = 0;
    for (const auto& t : bundle.at("tensors")) {
      std::size_t n = 1;
      for (const auto& d : t.at("shape")) n *= d.get<std::size_t>();
      count += n;
    }
    return {{"kind", bundle.at("kind")},
            {"tensors", bundle.at("tensors").size()},
            {"values", count},
            {"meta", bundle.at("meta")}};
  }
  if (fs::exists(path / "metadata.json")) {
    Json j = read_json(path / "metadata.json");
    std::size_t panels = 0;
    if (fs::exists(path / "panels")) {
      for ([[maybe_unused]] const auto& e : fs::directory_iterator(path / "panels")) ++panels;
    }
    return {{"kind", "sample-output"}, {"panels", panels}, {"metadata", j}};
  }
  throw ValidationError(path.string() + " is not a recognized artifact");
}

}  // namespace icv
