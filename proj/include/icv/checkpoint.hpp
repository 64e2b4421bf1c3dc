// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "icv/tensor.hpp"

namespace icv {

using Json = nlohmann::json;

inline constexpr int kBundleFormatVersion = 1;

// A directory of named tensors: <dir>/manifest.json lists every tensor with
// its shape and dtype, each stored at <dir>/tensors/<name>.bin in the tensor
// binary format. Used for model, adapter and optimizer checkpoints.
template <typename T>
struct TensorBundle {
  std::string kind;
  Json meta = Json::object();
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

// Writes into a staging directory and renames it onto `dir` once complete.
template <typename T>
void save_bundle(const std::filesystem::path& dir, const TensorBundle<T>& bundle);

// Validates the manifest against every tensor file; nothing is returned
// unless the whole bundle reads cleanly.
template <typename T>
TensorBundle<T> load_bundle(const std::filesystem::path& dir,
                            const std::string& expected_kind = "");

Json load_bundle_manifest(const std::filesystem::path& dir);

}  // namespace icv
