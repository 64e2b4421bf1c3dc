// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/latent_grid.hpp"

#include <algorithm>
#include <charconv>

namespace icv {

std::string to_string(const VideoShape& s) {
  return std::to_string(s.frames) + "x" + std::to_string(s.channels) + "x" +
         std::to_string(s.height) + "x" + std::to_string(s.width);
}

VideoTensor::VideoTensor(Tensor<float> values) : values_(std::move(values)) {
  if (values_.rank() != 4) {
    throw DimensionError("video tensor must be F x C x H x W, got " + shape_str(values_.shape()));
  }
}

VideoShape VideoTensor::shape() const {
  return {values_.dim(0), values_.dim(1), values_.dim(2), values_.dim(3)};
}

PanelLayout PanelLayout::spatial(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw LayoutError("spatial layout needs rows, cols >= 1");
  return PanelLayout{Axis::Spatial, rows, cols, 1};
}

PanelLayout PanelLayout::temporal(std::size_t count) {
  if (count == 0) throw LayoutError("temporal layout needs count >= 1");
  return PanelLayout{Axis::Temporal, 1, 1, count};
}

VideoShape PanelLayout::composite_shape(const VideoShape& p) const {
  if (axis == Axis::Spatial) return {p.frames, p.channels, p.height * rows, p.width * cols};
  return {p.frames * count, p.channels, p.height, p.width};
}

VideoShape PanelLayout::panel_shape(const VideoShape& c) const {
  if (axis == Axis::Spatial) {
    if (c.height % rows != 0 || c.width % cols != 0) {
      throw LayoutError("composite " + to_string(c) + " not divisible into " +
                        icv::to_string(*this));
    }
    return {c.frames, c.channels, c.height / rows, c.width / cols};
  }
  if (c.frames % count != 0) {
    throw LayoutError("composite " + to_string(c) + " not divisible into " +
                      icv::to_string(*this));
  }
  return {c.frames / count, c.channels, c.height, c.width};
}

std::string to_string(const PanelLayout& layout) {
  if (layout.axis == Axis::Spatial) {
    return "spatial:" + std::to_string(layout.rows) + "x" + std::to_string(layout.cols);
  }
  return "temporal:" + std::to_string(layout.count);
}

namespace {

std::size_t parse_count(std::string_view s, const std::string& whole) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
    throw LayoutError("invalid layout descriptor '" + whole + "'");
  }
  return v;
}

}  // namespace

PanelLayout parse_layout(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw LayoutError("invalid layout descriptor '" + text + "'");
  const std::string_view kind(text.data(), colon);
  const std::string_view rest(text.data() + colon + 1, text.size() - colon - 1);
  if (kind == "spatial") {
    const auto x = rest.find('x');
    if (x == std::string_view::npos) throw LayoutError("invalid layout descriptor '" + text + "'");
    return PanelLayout::spatial(parse_count(rest.substr(0, x), text),
                                parse_count(rest.substr(x + 1), text));
  }
  if (kind == "temporal") return PanelLayout::temporal(parse_count(rest, text));
  throw LayoutError("invalid layout descriptor '" + text + "'");
}

PanelRegion panel_region(const PanelLayout& layout, std::size_t index, const VideoShape& p) {
  if (index >= layout.panel_count()) {
    throw BoundsError("panel index " + std::to_string(index) + " outside layout " +
                      to_string(layout));
  }
  if (layout.axis == Axis::Spatial) {
    const std::size_t r = index / layout.cols, c = index % layout.cols;
    return {0, p.frames, r * p.height, (r + 1) * p.height, c * p.width, (c + 1) * p.width};
  }
  return {index * p.frames, (index + 1) * p.frames, 0, p.height, 0, p.width};
}

namespace {

// Copies between a panel and its region of the composite. `src`/`dst` are
// the composite or panel depending on direction.
void copy_region(const VideoShape& cs, const VideoShape& ps, const PanelRegion& reg,
                 const float* src, float* dst, bool to_composite) {
  for (std::size_t f = reg.frame_begin; f < reg.frame_end; ++f) {
    for (std::size_t ch = 0; ch < ps.channels; ++ch) {
      for (std::size_t y = reg.row_begin; y < reg.row_end; ++y) {
        const std::size_t c_off = ((f * cs.channels + ch) * cs.height + y) * cs.width + reg.col_begin;
        const std::size_t p_off =
            (((f - reg.frame_begin) * ps.channels + ch) * ps.height + (y - reg.row_begin)) * ps.width;
        if (to_composite) {
          std::copy_n(src + p_off, ps.width, dst + c_off);
        } else {
          std::copy_n(src + c_off, ps.width, dst + p_off);
        }
      }
    }
  }
}

void place(VideoTensor& composite, const VideoTensor& panel, const PanelRegion& reg) {
  copy_region(composite.shape(), panel.shape(), reg, panel.values().ptr(),
              composite.values().ptr(), true);
}

void extract(const VideoTensor& composite, VideoTensor& panel, const PanelRegion& reg) {
  copy_region(composite.shape(), panel.shape(), reg, composite.values().ptr(),
              panel.values().ptr(), false);
}

}  // namespace

VideoTensor compose_panels(std::span<const VideoTensor> panels, const PanelLayout& layout) {
  if (panels.size() != layout.panel_count()) {
    throw LayoutError("layout " + to_string(layout) + " expects " +
                      std::to_string(layout.panel_count()) + " panels, got " +
                      std::to_string(panels.size()) +
                      (panels.size() > layout.panel_count()
                           ? " (first extra panel index " + std::to_string(layout.panel_count()) + ")"
                           : ""));
  }
  const VideoShape ps = panels[0].shape();
  for (std::size_t k = 1; k < panels.size(); ++k) {
    if (!(panels[k].shape() == ps)) {
      throw LayoutError("panel " + std::to_string(k) + " has shape " + to_string(panels[k].shape()) +
                        ", expected " + to_string(ps));
    }
  }
  VideoTensor composite(layout.composite_shape(ps));
  for (std::size_t k = 0; k < panels.size(); ++k) {
    place(composite, panels[k], panel_region(layout, k, ps));
  }
  return composite;
}

std::vector<VideoTensor> split_panels(const VideoTensor& composite, const PanelLayout& layout) {
  const VideoShape ps = layout.panel_shape(composite.shape());
  std::vector<VideoTensor> out;
  out.reserve(layout.panel_count());
  for (std::size_t k = 0; k < layout.panel_count(); ++k) {
    VideoTensor panel(ps);
    extract(composite, panel, panel_region(layout, k, ps));
    out.push_back(std::move(panel));
  }
  return out;
}

RegionMask::RegionMask(Tensor<float> values) : values_(std::move(values)) {
  for (auto v : values_.data()) {
    if (v != 0.0f && v != 1.0f) throw ValidationError("region mask values must be 0 or 1");
  }
}

double RegionMask::ones_fraction() const {
  double ones = 0;
  for (auto v : values_.data()) ones += v;
  return ones / static_cast<double>(values_.numel());
}

RegionMask build_mask(const PanelLayout& layout, const std::set<std::size_t>& generate_indices,
                      const VideoShape& panel_shape) {
  for (auto k : generate_indices) {
    if (k >= layout.panel_count()) {
      throw BoundsError("generate index " + std::to_string(k) + " outside [0, " +
                        std::to_string(layout.panel_count()) + ")");
    }
  }
  VideoTensor mask(layout.composite_shape(panel_shape));
  VideoTensor ones(Tensor<float>::full(panel_shape.dims(), 1.0f));
  for (auto k : generate_indices) place(mask, ones, panel_region(layout, k, panel_shape));
  return RegionMask(std::move(mask.values()));
}

std::size_t PanelSet::generated_count() const {
  return static_cast<std::size_t>(
      std::count_if(panels.begin(), panels.end(), [](const auto& p) { return !p.has_value(); }));
}

std::size_t PanelSet::conditional_count() const { return panels.size() - generated_count(); }

std::set<std::size_t> PanelSet::missing_indices() const {
  std::set<std::size_t> out;
  for (std::size_t k = 0; k < panels.size(); ++k) {
    if (!panels[k]) out.insert(k);
  }
  return out;
}

VideoShape PanelSet::panel_shape(std::optional<VideoShape> fallback) const {
  if (panels.size() != layout.panel_count()) {
    throw LayoutError("panel set holds " + std::to_string(panels.size()) + " slots but layout " +
                      to_string(layout) + " has " + std::to_string(layout.panel_count()));
  }
  std::optional<VideoShape> shape;
  for (std::size_t k = 0; k < panels.size(); ++k) {
    if (!panels[k]) continue;
    if (!shape) {
      shape = panels[k]->shape();
    } else if (!(panels[k]->shape() == *shape)) {
      throw LayoutError("panel " + std::to_string(k) + " has shape " +
                        to_string(panels[k]->shape()) + ", expected " + to_string(*shape));
    }
  }
  if (shape && fallback && !(*shape == *fallback)) {
    throw LayoutError("conditioning panels have shape " + to_string(*shape) + ", expected " +
                      to_string(*fallback));
  }
  if (shape) return *shape;
  if (fallback) return *fallback;
  throw LayoutError("panel set has no conditioning panels to infer a shape from");
}

VideoTensor PanelSet::known_composite(std::optional<VideoShape> fallback) const {
  const VideoShape ps = panel_shape(fallback);
  std::vector<VideoTensor> filled;
  filled.reserve(panels.size());
  for (const auto& p : panels) filled.push_back(p ? *p : VideoTensor(ps));
  return compose_panels(filled, layout);
}

}  // namespace icv
