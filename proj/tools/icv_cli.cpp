// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: synth-data, train, sample, inpaint, split,
// probe-consistency, inspect.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "icv/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--profile", c.profile, "base profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", c.seed, "seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory");
}

icv::RunConfig resolve(const Common& c) {
  icv::RunConfig cfg = icv::profile_config(c.profile);
  if (!c.config.empty()) cfg = icv::load_config(c.config, cfg);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::filesystem::path out_dir(const Common& c, const icv::RunConfig& cfg, const std::string& name) {
  if (!c.out.empty()) return c.out;
  return std::filesystem::path(cfg.output_root) / name;
}

std::set<std::size_t> parse_indices(const std::string& text) {
  std::set<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const unsigned long v = std::stoul(item, &used);
    if (used != item.size()) throw icv::ConfigError("bad panel index '" + item + "'");
    out.insert(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context multi-panel video diffusion toolkit"};
  app.require_subcommand(1);

  Common synth_c, train_c, sample_c, inpaint_c, split_c, probe_c;

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic sprite dataset");
  add_common(synth, synth_c);

  auto* train = app.add_subcommand("train", "train a model or a LoRA adapter");
  add_common(train, train_c);
  std::string resume;
  std::optional<std::size_t> stop_after;
  train->add_option("--resume", resume, "checkpoint directory to continue from");
  train->add_option("--stop-after", stop_after, "stop after this global step");

  auto* sample_cmd = app.add_subcommand("sample", "generate a multi-panel composite");
  add_common(sample_cmd, sample_c);
  std::string prompt_file, checkpoint, lora;
  sample_cmd->add_option("--prompt-file", prompt_file, "unified prompt")->required();
  sample_cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
  sample_cmd->add_option("--lora", lora, "adapter checkpoint");

  auto* inpaint = app.add_subcommand("inpaint", "generate selected panels around known ones");
  add_common(inpaint, inpaint_c);
  std::string known, generate;
  inpaint->add_option("--prompt-file", prompt_file, "unified prompt")->required();
  inpaint->add_option("--checkpoint", checkpoint, "model checkpoint");
  inpaint->add_option("--lora", lora, "adapter checkpoint");
  inpaint->add_option("--known", known, "directory with panel_K.bin files")->required();
  inpaint->add_option("--generate", generate, "comma-separated panel indices to generate");

  auto* split = app.add_subcommand("split", "split a composite tensor into panels");
  add_common(split, split_c);
  std::string input, layout_text;
  split->add_option("--input", input, "composite tensor file")->required();
  split->add_option("--layout", layout_text, "spatial:RxG or temporal:K (default from config)");

  auto* probe = app.add_subcommand("probe-consistency", "measure cross-panel color agreement");
  add_common(probe, probe_c);
  bool no_replay = false;
  probe->add_option("--checkpoint", checkpoint, "model checkpoint (default: untrained)");
  probe->add_option("--lora", lora, "adapter checkpoint");
  probe->add_flag("--no-replay", no_replay, "skip probing the training composites");

  auto* inspect = app.add_subcommand("inspect", "summarize an artifact");
  std::string target;
  inspect->add_option("path", target, "file or directory")->required();

  CLI11_PARSE(app, argc, argv);

  auto opt_path = [](const std::string& s) -> std::optional<std::filesystem::path> {
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
  };

  try {
    if (*synth) {
      const auto cfg = resolve(synth_c);
      const std::filesystem::path out = synth_c.out.empty() ? cfg.data_root : synth_c.out;
      const auto r = icv::cmd_synth_data(cfg, out);
      for (const auto& s : r.skipped_sources) std::cerr << "warning: skipped source " << s << "\n";
      std::cout << "wrote " << r.samples << " samples to " << out.string() << "\n";
    } else if (*train) {
      const auto cfg = resolve(train_c);
      icv::TrainOptions opts;
      opts.resume = opt_path(resume);
      opts.stop_after = stop_after;
      opts.log = &std::cout;
      const auto r = icv::cmd_train(cfg, out_dir(train_c, cfg, "train"), opts);
      std::cout << "trained steps " << r.start_step << ".." << r.end_step << ", final checkpoint "
                << r.final_checkpoint.string() << "\n";
    } else if (*sample_cmd) {
      const auto cfg = resolve(sample_c);
      icv::SampleOptions o{prompt_file, opt_path(checkpoint), opt_path(lora)};
      const auto out = out_dir(sample_c, cfg, "sample");
      icv::cmd_sample(cfg, o, out);
      std::cout << "wrote " << out.string() << "\n";
    } else if (*inpaint) {
      const auto cfg = resolve(inpaint_c);
      icv::InpaintOptions o;
      o.prompt_file = prompt_file;
      o.checkpoint = opt_path(checkpoint);
      o.lora = opt_path(lora);
      o.known_dir = known;
      o.generate = parse_indices(generate);
      const auto out = out_dir(inpaint_c, cfg, "inpaint");
      icv::cmd_inpaint(cfg, o, out, std::cerr);
      std::cout << "wrote " << out.string() << "\n";
    } else if (*split) {
      const auto cfg = resolve(split_c);
      const auto layout = layout_text.empty() ? cfg.layout() : icv::parse_layout(layout_text);
      const auto out = out_dir(split_c, cfg, "split");
      const auto panels = icv::cmd_split(input, layout, out);
      std::cout << "wrote " << panels.size() << " panels to " << out.string() << "\n";
    } else if (*probe) {
      const auto cfg = resolve(probe_c);
      icv::ProbeOptions o{opt_path(checkpoint), opt_path(lora), !no_replay};
      const auto out = out_dir(probe_c, cfg, "probe");
      const auto r = icv::cmd_probe_consistency(cfg, o, out);
      std::printf("samples %zu  joint %.4f  shuffled %.4f", r.samples, r.joint, r.shuffled);
      if (r.replay) std::printf("  replay %.4f", *r.replay);
      std::printf("\n");
    } else if (*inspect) {
      std::cout << icv::cmd_inspect(target).dump(2) << "\n";
    }
  } catch (const icv::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const icv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
