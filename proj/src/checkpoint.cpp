// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/checkpoint.hpp"

#include <fstream>

#include "icv/serialize.hpp"

namespace icv {
namespace fs = std::filesystem;

template <typename T>
const Tensor<T>& TensorBundle<T>::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw StructureError("bundle '" + kind + "' has no tensor '" + name + "'");
}

template <typename T>
bool TensorBundle<T>::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

template <typename T>
void save_bundle(const fs::path& dir, const TensorBundle<T>& bundle) {
  fs::path staging = dir;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging / "tensors");
  Json entries = Json::array();
  for (const auto& [name, t] : bundle.tensors) {
    const std::string file = "tensors/" + name + ".bin";
    save_tensor(staging / file, t);
    entries.push_back({{"name", name},
                       {"file", file},
                       {"shape", t.shape()},
                       {"dtype", dtype_name(dtype_of<T>())}});
  }
  Json manifest = {{"format_version", kBundleFormatVersion},
                   {"kind", bundle.kind},
                   {"meta", bundle.meta},
                   {"tensors", entries}};
  write_file_atomic(staging / "manifest.json", manifest.dump(2) + "\n");
  commit_directory(staging, dir);
}

Json load_bundle_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw CorruptFileError("missing manifest " + path.string());
  Json manifest;
  try {
    manifest = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw CorruptFileError("unparseable manifest " + path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format_version", 0) != kBundleFormatVersion) {
    throw CorruptFileError("unsupported manifest format in " + path.string());
  }
  return manifest;
}

template <typename T>
TensorBundle<T> load_bundle(const fs::path& dir, const std::string& expected_kind) {
  const Json manifest = load_bundle_manifest(dir);
  TensorBundle<T> bundle;
  try {
    bundle.kind = manifest.at("kind").get<std::string>();
    bundle.meta = manifest.at("meta");
    if (!expected_kind.empty() && bundle.kind != expected_kind) {
      throw StructureError("expected a '" + expected_kind + "' checkpoint at " + dir.string() +
                           ", found '" + bundle.kind + "'");
    }
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) throw CorruptFileError("missing tensor file " + file.string());
      auto t = load_tensor<T>(file);
      if (t.shape() != e.at("shape").get<Shape>()) {
        throw CorruptFileError("tensor " + file.string() + " has shape " + shape_str(t.shape()) +
                               " but manifest says " +
                               shape_str(e.at("shape").get<Shape>()));
      }
      bundle.tensors.emplace_back(name, std::move(t));
    }
  } catch (const Json::exception& e) {
    throw CorruptFileError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return bundle;
}

template struct TensorBundle<float>;
template struct TensorBundle<double>;
template void save_bundle(const fs::path&, const TensorBundle<float>&);
template void save_bundle(const fs::path&, const TensorBundle<double>&);
template TensorBundle<float> load_bundle(const fs::path&, const std::string&);
template TensorBundle<double> load_bundle(const fs::path&, const std::string&);

}  // namespace icv
