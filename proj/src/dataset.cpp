// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "icv/rng.hpp"
#include "icv/serialize.hpp"

namespace icv {

namespace fs = std::filesystem;

const std::vector<PaletteColor>& default_palette() {
  static const std::vector<PaletteColor> palette = {
      {"red", {1.f, -1.f, -1.f}},   {"green", {-1.f, 1.f, -1.f}},  {"blue", {-1.f, -1.f, 1.f}},
      {"yellow", {1.f, 1.f, -1.f}}, {"cyan", {-1.f, 1.f, 1.f}},    {"magenta", {1.f, -1.f, 1.f}},
      {"white", {1.f, 1.f, 1.f}},   {"orange", {1.f, 0.f, -1.f}},
  };
  return palette;
}

std::optional<PaletteColor> find_color(const std::string& name) {
  for (const auto& c : default_palette()) {
    if (c.name == name) return c;
  }
  static const std::vector<PaletteColor> extra = {{"purple", {0.f, -1.f, 1.f}},
                                                  {"pink", {1.f, 0.f, 0.5f}}};
  for (const auto& c : extra) {
    if (c.name == name) return c;
  }
  return std::nullopt;
}

std::vector<PaletteColor> resolve_palette(std::span<const std::string> names) {
  if (names.empty()) throw ConfigError("palette is empty");
  std::vector<PaletteColor> out;
  std::set<std::string> seen;
  for (const auto& n : names) {
    auto c = find_color(n);
    if (!c) throw ConfigError("unknown palette color '" + n + "'");
    if (!seen.insert(n).second) throw ConfigError("palette color '" + n + "' listed twice");
    out.push_back(*c);
  }
  return out;
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "?";
}

std::array<int, 2> displacement(Direction d) {
  switch (d) {
    case Direction::Up: return {-1, 0};
    case Direction::Down: return {1, 0};
    case Direction::Left: return {0, -1};
    case Direction::Right: return {0, 1};
  }
  return {0, 0};
}

std::string overall_caption(const std::string& subject) {
  return "a set of videos of the same " + subject;
}

std::vector<SetSample> build_set_samples(std::span<const ClipRecord> records,
                                         const PanelLayout& layout, BuildReport* report) {
  std::map<std::string, std::vector<const ClipRecord*>> groups;
  for (const auto& r : records) groups[r.source_id].push_back(&r);

  const std::size_t need = layout.panel_count();
  std::vector<SetSample> out;
  for (auto& [source, clips] : groups) {
    std::sort(clips.begin(), clips.end(),
              [](const ClipRecord* a, const ClipRecord* b) { return a->id < b->id; });
    const VideoShape shape = clips.front()->frames.shape();
    for (const auto* c : clips) {
      if (c->frames.shape() != shape) {
        throw ValidationError("source '" + source + "': clip '" + c->id + "' has shape " +
                              to_string(c->frames.shape()) + ", expected " + to_string(shape));
      }
    }
    if (clips.size() < need) {
      if (report) {
        report->skipped_sources.push_back(source);
        report->warnings.push_back("source '" + source + "' has " + std::to_string(clips.size()) +
                                   " clips, layout " + to_string(layout) + " needs " +
                                   std::to_string(need));
      }
      continue;
    }
    SetSample s;
    s.id = source;
    s.source_id = source;
    s.layout = layout;
    std::vector<VideoTensor> panels;
    for (std::size_t k = 0; k < need; ++k) {
      panels.push_back(clips[k]->frames);
      s.prompt.per_panel.push_back(clips[k]->caption);
    }
    const std::string& subject = clips.front()->subject;
    if (subject.empty()) {
      s.prompt.overall = "a set of related videos from source " + source;
      s.caption_provenance = "template:source-id";
    } else {
      s.prompt.overall = overall_caption(subject);
      s.caption_provenance = "template:subject";
    }
    compose_prompt(s.prompt);  // rejects reserved delimiters in captions
    s.composite = compose_panels(panels, layout);
    out.push_back(std::move(s));
  }
  return out;
}

void SynthParams::validate() const {
  if (side == 0 || frames == 0 || sprite == 0) throw ConfigError("synthetic extents must be positive");
  if (sprite + frames - 1 > side) {
    throw ConfigError("a " + std::to_string(sprite) + "-cell sprite moving " +
                      std::to_string(frames - 1) + " cells leaves a " + std::to_string(side) +
                      "-cell frame");
  }
  if (panels == 0 || panels > 4) throw ConfigError("panels per sample must be in [1, 4] (distinct directions)");
  resolve_palette(palette);
}

PanelLayout SynthParams::layout() const {
  if (axis == Axis::Temporal) return PanelLayout::temporal(panels);
  std::size_t rows = 1;
  for (std::size_t r = 1; r * r <= panels; ++r) {
    if (panels % r == 0) rows = r;
  }
  return PanelLayout::spatial(rows, panels / rows);
}

VideoTensor render_clip(const SynthParams& params, const PaletteColor& color, Direction dir,
                        std::size_t start_row, std::size_t start_col) {
  VideoTensor clip(VideoShape{params.frames, 3, params.side, params.side});
  std::fill(clip.values().data().begin(), clip.values().data().end(), -1.0f);
  const auto [dy, dx] = displacement(dir);
  for (std::size_t f = 0; f < params.frames; ++f) {
    const long r0 = static_cast<long>(start_row) + dy * static_cast<long>(f);
    const long c0 = static_cast<long>(start_col) + dx * static_cast<long>(f);
    if (r0 < 0 || c0 < 0 || r0 + static_cast<long>(params.sprite) > static_cast<long>(params.side) ||
        c0 + static_cast<long>(params.sprite) > static_cast<long>(params.side)) {
      throw BoundsError("sprite leaves the frame at frame " + std::to_string(f));
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < params.sprite; ++y) {
        for (std::size_t x = 0; x < params.sprite; ++x) {
          clip.at(f, c, static_cast<std::size_t>(r0) + y, static_cast<std::size_t>(c0) + x) = color.rgb[c];
        }
      }
    }
  }
  return clip;
}

std::vector<ClipRecord> synth_generate(const SynthParams& params, std::size_t sources) {
  params.validate();
  const auto palette = resolve_palette(params.palette);
  const std::size_t travel = params.frames - 1;
  const std::size_t free_span = params.side - params.sprite;  // max start on a static axis
  std::vector<ClipRecord> out;
  for (std::size_t s = 0; s < sources; ++s) {
    Rng rng(mix_seed(params.seed, s));
    const PaletteColor& color = palette[rng.below(palette.size())];
    std::array<Direction, 4> dirs = {Direction::Up, Direction::Down, Direction::Left, Direction::Right};
    for (std::size_t i = dirs.size() - 1; i > 0; --i) std::swap(dirs[i], dirs[rng.below(i + 1)]);

    char sid[32];
    std::snprintf(sid, sizeof sid, "s%05zu", s);
    for (std::size_t k = 0; k < params.panels; ++k) {
      const Direction d = dirs[k];
      const auto [dy, dx] = displacement(d);
      // Start ranges keep every frame inside the canvas.
      auto pick = [&](int delta) -> std::size_t {
        if (delta == 0) return rng.below(free_span + 1);
        const std::size_t off = rng.below(free_span - travel + 1);
        return delta > 0 ? off : off + travel;
      };
      const std::size_t row = pick(dy);
      const std::size_t col = pick(dx);
      ClipRecord rec;
      rec.id = std::string(sid) + "-c" + std::to_string(k);
      rec.source_id = sid;
      rec.subject = color.name + " square";
      rec.caption = "a " + color.name + " square moving " + to_string(d);
      rec.frames = render_clip(params, color, d, row, col);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

Manifest export_dataset(std::span<const SetSample> samples, const fs::path& root, const Json& extra) {
  fs::path staging = root;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging / "tensors");

  Manifest manifest;
  manifest.root = root;
  manifest.format_version = kDatasetFormatVersion;
  Json entries = Json::array();
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
    ManifestEntry e{s.id, "tensors/" + s.id + ".bin", compose_prompt(s.prompt), to_string(s.layout),
                    s.source_id, s.caption_provenance};
    save_tensor(staging / e.tensor_file, s.composite.values());
    entries.push_back({{"id", e.id},
                       {"tensor", e.tensor_file},
                       {"prompt", e.prompt},
                       {"layout", e.layout},
                       {"source_id", e.source_id},
                       {"caption_provenance", e.caption_provenance}});
    manifest.entries.push_back(std::move(e));
  }
  Json doc = {{"format_version", kDatasetFormatVersion}, {"samples", entries}, {"meta", extra}};
  write_file_atomic(staging / "manifest.json", doc.dump(2) + "\n");
  commit_directory(staging, root);
  return manifest;
}

Manifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw ValidationError("dataset manifest missing: " + path.string());
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.root = root;
  try {
    m.format_version = doc.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion) {
      throw ValidationError(path.string() + ": unsupported format_version " +
                            std::to_string(m.format_version));
    }
    for (const auto& e : doc.at("samples")) {
      m.entries.push_back({e.at("id").get<std::string>(), e.at("tensor").get<std::string>(),
                           e.at("prompt").get<std::string>(), e.at("layout").get<std::string>(),
                           e.at("source_id").get<std::string>(),
                           e.value("caption_provenance", std::string())});
    }
  } catch (const Json::exception& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
  return m;
}

std::vector<SetSample> import_dataset(const fs::path& root) {
  const Manifest m = read_manifest(root);
  std::vector<SetSample> out;
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    const std::string where = "sample '" + e.id + "'";
    if (!ids.insert(e.id).second) throw ValidationError("duplicate " + where);
    SetSample s;
    s.id = e.id;
    s.source_id = e.source_id;
    s.caption_provenance = e.caption_provenance;
    try {
      s.prompt = parse_prompt(e.prompt);
    } catch (const ParseError& err) {
      throw ParseError(where + ": prompt: " + err.what(), err.position());
    }
    try {
      s.layout = parse_layout(e.layout);
    } catch (const Error& err) {
      throw ValidationError(where + ": " + err.what());
    }
    const fs::path file = root / e.tensor_file;
    if (!fs::exists(file)) throw ValidationError(where + ": missing tensor file " + file.string());
    Tensor<float> values;
    try {
      values = load_tensor<float>(file);
    } catch (const Error& err) {
      throw CorruptFileError(where + ": " + file.string() + ": " + err.what());
    }
    if (values.rank() != 4) {
      throw ValidationError(where + ": " + file.string() + " is not a [F, C, H, W] tensor");
    }
    s.composite = VideoTensor(std::move(values));
    try {
      s.layout.panel_shape(s.composite.shape());
    } catch (const Error& err) {
      throw ValidationError(where + ": " + err.what());
    }
    if (s.prompt.per_panel.size() != s.layout.panel_count()) {
      throw ValidationError(where + ": prompt has " + std::to_string(s.prompt.per_panel.size()) +
                            " scenes, layout has " + std::to_string(s.layout.panel_count()) +
                            " panels");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string dominant_color_probe(const VideoTensor& panel, std::span<const PaletteColor> palette,
                                 double threshold, double radius) {
  if (palette.empty()) throw ConfigError("probe palette is empty");
  if (panel.channels() != 3) throw DimensionError("color probe expects 3 channels");
  double sum[3] = {0, 0, 0};
  std::size_t count = 0;
  for (std::size_t f = 0; f < panel.frames(); ++f) {
    for (std::size_t y = 0; y < panel.height(); ++y) {
      for (std::size_t x = 0; x < panel.width(); ++x) {
        double px[3];
        for (std::size_t c = 0; c < 3; ++c) px[c] = std::clamp<double>(panel.at(f, c, y, x), -1.0, 1.0);
        if (std::max({px[0], px[1], px[2]}) <= threshold) continue;
        for (std::size_t c = 0; c < 3; ++c) sum[c] += px[c];
        ++count;
      }
    }
  }
  if (count == 0) return "none";
  double best = radius * radius;
  std::string name = "none";
  for (const auto& p : palette) {
    double d = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double diff = sum[c] / static_cast<double>(count) - p.rgb[c];
      d += diff * diff;
    }
    if (d < best || (name == "none" && d <= best)) {
      best = d;
      name = p.name;
    }
  }
  return name;
}

}  // namespace icv
