// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icv/checkpoint.hpp"
#include "icv/latent_grid.hpp"
#include "icv/prompt.hpp"

namespace icv {

struct PaletteColor {
  std::string name;
  std::array<float, 3> rgb;  // in [-1, 1]
};

// The eight colors used by default, in a fixed order.
const std::vector<PaletteColor>& default_palette();
// Any color name the generator can render, including ones outside the default set.
std::optional<PaletteColor> find_color(const std::string& name);
// Throws ConfigError on unknown or duplicate names.
std::vector<PaletteColor> resolve_palette(std::span<const std::string> names);

enum class Direction { Up, Down, Left, Right };
std::string to_string(Direction d);
// Unit displacement per frame as (dy, dx).
std::array<int, 2> displacement(Direction d);

struct ClipRecord {
  std::string id;
  VideoTensor frames;
  std::string caption;
  std::string source_id;
  // Shared description of the source, e.g. "red square". Used to write the
  // overall caption of a set.
  std::string subject;
};

struct SetSample {
  std::string id;
  VideoTensor composite;
  PromptSet prompt;
  PanelLayout layout;
  std::string source_id;
  std::string caption_provenance;

  friend bool operator==(const SetSample&, const SetSample&) = default;
};

struct BuildReport {
  std::vector<std::string> skipped_sources;
  std::vector<std::string> warnings;
};

// "a set of videos of the same {subject}"
std::string overall_caption(const std::string& subject);

// One sample per source (sources in id order), built from the first
// panel_count clips by id. Sources with too few clips are skipped and
// reported. Throws ValidationError if clips of a source differ in shape.
std::vector<SetSample> build_set_samples(std::span<const ClipRecord> records,
                                         const PanelLayout& layout, BuildReport* report = nullptr);

struct SynthParams {
  std::size_t side = 16;
  std::size_t frames = 8;
  std::size_t sprite = 4;
  std::vector<std::string> palette = {"red",  "green",   "blue",  "yellow",
                                      "cyan", "magenta", "white", "orange"};
  std::size_t panels = 4;
  Axis axis = Axis::Spatial;
  std::uint64_t seed = 0;

  // Throws ConfigError; checks that the sprite stays inside the frame for
  // every motion step and that directions can be distinct per source.
  void validate() const;
  // Spatial: the most square R x G grid holding `panels`; temporal: K = panels.
  PanelLayout layout() const;
};

// A hard-edged sprite translating one cell per frame on a black background.
VideoTensor render_clip(const SynthParams& params, const PaletteColor& color, Direction dir,
                        std::size_t start_row, std::size_t start_col);

// `sources` groups of `panels` clips. Each source shares one color and uses
// distinct directions. Pure function of (params, sources).
std::vector<ClipRecord> synth_generate(const SynthParams& params, std::size_t sources);

struct ManifestEntry {
  std::string id;
  std::string tensor_file;  // relative to the root
  std::string prompt;
  std::string layout;
  std::string source_id;
  std::string caption_provenance;
};

struct Manifest {
  std::filesystem::path root;
  int format_version = 1;
  std::vector<ManifestEntry> entries;
};

inline constexpr int kDatasetFormatVersion = 1;

// <root>/manifest.json + <root>/tensors/<id>.bin, written to a staging
// directory and renamed into place.
Manifest export_dataset(std::span<const SetSample> samples, const std::filesystem::path& root,
                        const Json& extra = Json::object());
Manifest read_manifest(const std::filesystem::path& root);
// Validates every entry; errors name the failing entry or file.
std::vector<SetSample> import_dataset(const std::filesystem::path& root);

// Clamps to [-1, 1], keeps cells whose brightest channel exceeds `threshold`,
// and matches their mean color to the nearest palette entry. Returns "none"
// when no cell passes or the mean lies farther than `radius` from every entry.
std::string dominant_color_probe(const VideoTensor& panel, std::span<const PaletteColor> palette,
                                 double threshold = 0.2, double radius = 1.0);

}  // namespace icv
