// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "icv/serialize.hpp"

namespace icv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected an unsigned 64-bit integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define ICV_SIZE(K, M) \
  Field { K, [](const RunConfig& c) { return std::to_string(c.M); }, \
          [](RunConfig& c, const std::string& v) { c.M = to_size(K, v); } }
#define ICV_DOUBLE(K, M) \
  Field { K, [](const RunConfig& c) { return fmt_double(c.M); }, \
          [](RunConfig& c, const std::string& v) { c.M = to_double(K, v); } }
#define ICV_STRING(K, M) \
  Field { K, [](const RunConfig& c) { return c.M; }, [](RunConfig& c, const std::string& v) { c.M = v; } }
#define ICV_LIST(K, M) \
  Field { K, [](const RunConfig& c) { return join(c.M); }, \
          [](RunConfig& c, const std::string& v) { c.M = to_list(v); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"config_version", [](const RunConfig& c) { return std::to_string(c.config_version); },
            [](RunConfig& c, const std::string& v) {
              const auto n = to_size("config_version", v);
              if (n != static_cast<std::size_t>(kConfigVersion)) {
                throw ConfigError("unsupported config_version " + v);
              }
              c.config_version = static_cast<int>(n);
            }},
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      ICV_STRING("output.root", output_root),
      ICV_SIZE("model.dim", model.dim),
      ICV_SIZE("model.depth", model.depth),
      ICV_SIZE("model.heads", model.heads),
      ICV_SIZE("model.patch_t", model.patch_t),
      ICV_SIZE("model.patch_h", model.patch_h),
      ICV_SIZE("model.patch_w", model.patch_w),
      ICV_SIZE("model.text_len", model.text_len),
      ICV_SIZE("model.vocab_size", model.vocab_size),
      ICV_SIZE("model.channels", model.channels),
      ICV_SIZE("model.max_frames", model.max_frames),
      ICV_SIZE("model.max_height", model.max_height),
      ICV_SIZE("model.max_width", model.max_width),
      ICV_SIZE("model.mlp_ratio", model.mlp_ratio),
      ICV_SIZE("schedule.steps", schedule_steps),
      ICV_DOUBLE("schedule.beta_start", beta_start),
      ICV_DOUBLE("schedule.beta_end", beta_end),
      ICV_SIZE("sampler.steps", sampler.steps),
      ICV_DOUBLE("sampler.guidance", sampler.guidance),
      ICV_DOUBLE("sampler.eta", sampler.eta),
      Field{"sampler.clip", [](const RunConfig& c) { return std::string(c.sampler.clip ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.sampler.clip = to_bool("sampler.clip", v); }},
      ICV_SIZE("lora.rank", lora.rank),
      ICV_DOUBLE("lora.alpha", lora.alpha),
      ICV_LIST("lora.targets", lora.targets),
      Field{"train.mode", [](const RunConfig& c) { return c.train.mode; },
            [](RunConfig& c, const std::string& v) {
              if (v != "full" && v != "lora") throw ConfigError("train.mode must be full or lora");
              c.train.mode = v;
            }},
      ICV_STRING("train.base_checkpoint", train.base_checkpoint),
      ICV_SIZE("train.batch_size", train.batch_size),
      ICV_SIZE("train.steps", train.steps),
      ICV_DOUBLE("train.lr", train.lr),
      ICV_DOUBLE("train.beta1", train.beta1),
      ICV_DOUBLE("train.beta2", train.beta2),
      ICV_DOUBLE("train.eps", train.eps),
      ICV_DOUBLE("train.weight_decay", train.weight_decay),
      ICV_SIZE("train.warmup_steps", train.warmup_steps),
      ICV_DOUBLE("train.grad_clip", train.grad_clip),
      Field{"train.ema", [](const RunConfig& c) { return std::string(c.train.ema ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.train.ema = to_bool("train.ema", v); }},
      ICV_DOUBLE("train.prompt_dropout", train.prompt_dropout),
      ICV_SIZE("train.checkpoint_every", train.checkpoint_every),
      ICV_LIST("train.colors", train.colors),
      ICV_STRING("data.root", data_root),
      ICV_SIZE("data.sources", data_sources),
      ICV_SIZE("data.side", synth.side),
      ICV_SIZE("data.frames", synth.frames),
      ICV_SIZE("data.sprite", synth.sprite),
      ICV_LIST("data.palette", synth.palette),
      ICV_SIZE("data.panels", synth.panels),
      Field{"data.axis",
            [](const RunConfig& c) {
              return std::string(c.synth.axis == Axis::Spatial ? "spatial" : "temporal");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "spatial") {
                c.synth.axis = Axis::Spatial;
              } else if (v == "temporal") {
                c.synth.axis = Axis::Temporal;
              } else {
                throw ConfigError("data.axis must be spatial or temporal");
              }
            }},
      ICV_SIZE("probe.samples", probe.samples),
      ICV_SIZE("probe.batch", probe.batch),
      ICV_DOUBLE("probe.threshold", probe.threshold),
      ICV_DOUBLE("probe.radius", probe.radius),
  };
  return table;
}

#undef ICV_SIZE
#undef ICV_DOUBLE
#undef ICV_STRING
#undef ICV_LIST

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (model.timesteps != schedule_steps) {
    throw ConfigError("model.timesteps must equal schedule.steps");
  }
  sampler.validate(schedule());
  synth.validate();
  if (lora.rank == 0 || !(lora.alpha > 0.0)) throw ConfigError("lora.rank and lora.alpha must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (train.ema) throw ConfigError("train.ema = true is not supported");
  if (train.prompt_dropout < 0.0 || train.prompt_dropout > 1.0) {
    throw ConfigError("train.prompt_dropout must lie in [0, 1]");
  }
  if (train.grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (train.checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be positive");
  for (const auto& c : train.colors) {
    if (!find_color(c)) throw ConfigError("train.colors: unknown color '" + c + "'");
  }
  if (probe.samples == 0 || probe.batch == 0) throw ConfigError("probe.samples and probe.batch must be positive");
  const VideoShape comp = composite_shape();
  if (comp.frames > model.max_frames || comp.height > model.max_height || comp.width > model.max_width) {
    throw ConfigError("composite " + to_string(comp) + " exceeds the model's maximum extents");
  }
  patch_grid(model, comp.frames, comp.height, comp.width);
}

RunConfig profile_config(const std::string& name) {
  RunConfig c;
  c.profile = name;
  c.model.dim = 64;
  c.model.depth = 4;
  c.model.heads = 4;
  c.model.patch_t = 1;
  c.model.patch_h = 4;
  c.model.patch_w = 4;
  c.model.max_frames = 8;
  c.model.max_height = 32;
  c.model.max_width = 32;
  if (name == "desk") {
    c.train.batch_size = 8;
    c.train.lr = 1e-3;
    c.train.steps = 2000;
  } else if (name == "paper") {
    c.train.batch_size = 128;
    c.train.lr = 1e-5;
    c.train.steps = 5000;
  } else {
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
  }
  c.lora.rank = 32;
  c.lora.alpha = 32.0;
  c.sampler.steps = 50;
  c.sampler.guidance = 6.0;
  return c;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      cfg.model.timesteps = cfg.schedule_steps;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  RunConfig cfg = std::move(base);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool any_setting = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "profile") {
        if (any_setting) throw ConfigError("profile must precede every other key");
        const std::uint64_t seed = cfg.seed;
        cfg = profile_config(value);
        cfg.seed = seed;
        continue;
      }
      apply_setting(cfg, key, value);
      any_setting = true;
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.model.timesteps = cfg.schedule_steps;
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return parse_config(read_file(path), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_config(const RunConfig& cfg) {
  std::string out = "profile = " + cfg.profile + "\n";
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

Json config_json(const RunConfig& cfg) {
  Json j = Json::object();
  j["profile"] = cfg.profile;
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  return j;
}

}  // namespace icv
