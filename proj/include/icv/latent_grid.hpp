// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "icv/tensor.hpp"

namespace icv {

// Extents of one video block, F x C x H x W.
struct VideoShape {
  std::size_t frames = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  Shape dims() const { return {frames, channels, height, width}; }
  friend bool operator==(const VideoShape&, const VideoShape&) = default;
};

std::string to_string(const VideoShape& s);

// A video (or latent) block with values nominally in [-1, 1]. The diffusion
// state lives directly in this space; there is no separate latent codec.
class VideoTensor {
 public:
  VideoTensor() = default;
  explicit VideoTensor(Tensor<float> values);
  explicit VideoTensor(const VideoShape& shape) : VideoTensor(Tensor<float>(shape.dims())) {}

  VideoShape shape() const;
  std::size_t frames() const { return values_.dim(0); }
  std::size_t channels() const { return values_.dim(1); }
  std::size_t height() const { return values_.dim(2); }
  std::size_t width() const { return values_.dim(3); }

  float& at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) {
    return values_[((f * channels() + c) * height() + y) * width() + x];
  }
  float at(std::size_t f, std::size_t c, std::size_t y, std::size_t x) const {
    return values_[((f * channels() + c) * height() + y) * width() + x];
  }

  const Tensor<float>& values() const noexcept { return values_; }
  Tensor<float>& values() noexcept { return values_; }

  friend bool operator==(const VideoTensor& a, const VideoTensor& b) {
    return a.values_ == b.values_;
  }

 private:
  Tensor<float> values_;
};

enum class Axis { Spatial, Temporal };

// How panels are arranged in a composite: a dense row-major R x G grid, or K
// panels back to back in time.
struct PanelLayout {
  Axis axis = Axis::Spatial;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t count = 1;  // temporal panel count

  static PanelLayout spatial(std::size_t rows, std::size_t cols);
  static PanelLayout temporal(std::size_t count);

  std::size_t panel_count() const { return axis == Axis::Spatial ? rows * cols : count; }

  // Composite extents for a given panel shape, and the inverse.
  VideoShape composite_shape(const VideoShape& panel) const;
  VideoShape panel_shape(const VideoShape& composite) const;

  friend bool operator==(const PanelLayout&, const PanelLayout&) = default;
};

// "spatial:RxG" / "temporal:K"
std::string to_string(const PanelLayout& layout);
PanelLayout parse_layout(const std::string& text);

// Half-open extents of one panel inside the composite.
struct PanelRegion {
  std::size_t frame_begin, frame_end;
  std::size_t row_begin, row_end;
  std::size_t col_begin, col_end;
};
PanelRegion panel_region(const PanelLayout& layout, std::size_t index, const VideoShape& panel);

VideoTensor compose_panels(std::span<const VideoTensor> panels, const PanelLayout& layout);
std::vector<VideoTensor> split_panels(const VideoTensor& composite, const PanelLayout& layout);

// Full-resolution binary mask over a composite: 1 = generate, 0 = known.
class RegionMask {
 public:
  RegionMask() = default;
  explicit RegionMask(Tensor<float> values);

  const Tensor<float>& values() const noexcept { return values_; }
  bool generate_at(std::size_t flat_index) const { return values_[flat_index] > 0.5f; }
  double ones_fraction() const;

 private:
  Tensor<float> values_;
};

RegionMask build_mask(const PanelLayout& layout, const std::set<std::size_t>& generate_indices,
                      const VideoShape& panel_shape);

// The n panels to generate and m conditioning panels of one sample. Before
// sampling exactly the conditioning slots hold tensors.
struct PanelSet {
  PanelLayout layout;
  std::vector<std::optional<VideoTensor>> panels;

  std::size_t generated_count() const;    // n
  std::size_t conditional_count() const;  // m
  std::set<std::size_t> missing_indices() const;

  // Shared shape of the present panels; throws LayoutError if none present
  // and `fallback` is not given, or if present panels disagree.
  VideoShape panel_shape(std::optional<VideoShape> fallback = std::nullopt) const;

  // Composite with present panels in place and zeros elsewhere.
  VideoTensor known_composite(std::optional<VideoShape> fallback = std::nullopt) const;
};

}  // namespace icv
