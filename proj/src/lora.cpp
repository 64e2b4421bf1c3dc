// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/lora.hpp"

#include <algorithm>
#include <cmath>

#include "icv/rng.hpp"

namespace icv {

void to_json(Json& j, const LoraSpec& s) {
  j = Json{{"rank", s.rank}, {"alpha", s.alpha}, {"targets", s.targets}};
}

void from_json(const Json& j, LoraSpec& s) {
  j.at("rank").get_to(s.rank);
  j.at("alpha").get_to(s.alpha);
  j.at("targets").get_to(s.targets);
}

template <typename T>
const LoraLayer<T>* LoraWeights<T>::find(const std::string& layer_name) const {
  for (const auto& l : layers) {
    if (l.name == layer_name) return &l;
  }
  return nullptr;
}

template <typename T>
std::vector<std::pair<std::string, Var<T>>> LoraWeights<T>::named_parameters() const {
  std::vector<std::pair<std::string, Var<T>>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.name + ".lora_a", l.a);
    out.emplace_back(l.name + ".lora_b", l.b);
  }
  return out;
}

namespace {

bool targeted(const LoraSpec& spec, const std::string& full, const std::string& kind) {
  return std::find(spec.targets.begin(), spec.targets.end(), full) != spec.targets.end() ||
         std::find(spec.targets.begin(), spec.targets.end(), kind) != spec.targets.end();
}

void check_targets(const LoraSpec& spec, std::size_t depth) {
  static const std::vector<std::string> kinds = {"attn.qkv", "attn.out", "mlp.fc1", "mlp.fc2"};
  if (spec.targets.empty()) throw ConfigError("LoRA target list is empty");
  for (const auto& t : spec.targets) {
    if (std::find(kinds.begin(), kinds.end(), t) != kinds.end()) continue;
    bool found = false;
    for (std::size_t i = 0; i < depth && !found; ++i) {
      const auto names = block_linear_names(i);
      found = std::find(names.begin(), names.end(), t) != names.end();
    }
    if (!found) throw ConfigError("unknown LoRA target '" + t + "'");
  }
}

}  // namespace

template <typename T>
LoraWeights<T> inject(const DiTParameters<T>& params, const LoraSpec& spec, std::uint64_t seed) {
  if (spec.rank == 0) throw ConfigError("LoRA rank must be positive");
  if (!(spec.alpha > 0.0) || !std::isfinite(spec.alpha)) throw ConfigError("LoRA alpha must be positive");
  const ModelConfig& cfg = params.config();
  check_targets(spec, cfg.depth);

  LoraWeights<T> lora;
  lora.spec = spec;
  lora.seed = seed;
  lora.model_depth = cfg.depth;
  lora.model_dim = cfg.dim;
  Rng rng(mix_seed(seed, 0x10a));
  const double sigma = 1.0 / std::sqrt(static_cast<double>(spec.rank));
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    for (const auto& name : block_linear_names(i)) {
      const std::string kind = name.substr(name.find('.', 7) + 1);
      if (!targeted(spec, name, kind)) continue;
      const auto& w = params.get(name + ".weight");
      const std::size_t out = w.dim(0), in = w.dim(1);
      if (spec.rank > std::min(in, out)) {
        throw ConfigError("LoRA rank " + std::to_string(spec.rank) + " exceeds min(in, out) = " +
                          std::to_string(std::min(in, out)) + " of layer '" + name + "'");
      }
      Tensor<T> a({spec.rank, in});
      for (auto& v : a.data()) v = static_cast<T>(sigma * rng.normal());
      lora.layers.push_back({name, Var<T>::parameter(std::move(a)),
                             Var<T>::parameter(Tensor<T>({out, spec.rank}))});
    }
  }
  return lora;
}

template <typename T>
Var<T> lora_delta(const Var<T>& x, const LoraLayer<T>& layer, T scaling) {
  return scale(linear(linear(x, layer.a), layer.b), scaling);
}

namespace {

template <typename T>
DiTParameters<T> apply_delta(const DiTParameters<T>& params, const LoraWeights<T>& lora,
                             double sign) {
  check_lora_matches(params, lora);
  DiTParameters<T> out = params.clone();
  const double s = sign * lora.spec.scaling();
  for (const auto& layer : lora.layers) {
    Var<T> w = out.get(layer.name + ".weight");
    Tensor<T>& wv = w.mutable_value();
    const Tensor<T>& a = layer.a.value();
    const Tensor<T>& b = layer.b.value();
    const std::size_t rows = wv.dim(0), cols = wv.dim(1), r = a.dim(0);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) {
          acc += static_cast<double>(b[i * r + k]) * static_cast<double>(a[k * cols + j]);
        }
        wv[i * cols + j] = static_cast<T>(static_cast<double>(wv[i * cols + j]) + s * acc);
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
DiTParameters<T> merge(const DiTParameters<T>& params, const LoraWeights<T>& lora) {
  return apply_delta(params, lora, 1.0);
}

template <typename T>
DiTParameters<T> unmerge(const DiTParameters<T>& params, const LoraWeights<T>& lora) {
  return apply_delta(params, lora, -1.0);
}

template <typename T>
void check_lora_matches(const DiTParameters<T>& params, const LoraWeights<T>& lora) {
  const ModelConfig& cfg = params.config();
  if (lora.model_depth != cfg.depth || lora.model_dim != cfg.dim) {
    throw StructureError("adapter was built for depth " + std::to_string(lora.model_depth) +
                         ", dim " + std::to_string(lora.model_dim) + "; model has depth " +
                         std::to_string(cfg.depth) + ", dim " + std::to_string(cfg.dim));
  }
  for (const auto& layer : lora.layers) {
    if (!params.contains(layer.name + ".weight")) {
      throw StructureError("adapter layer '" + layer.name + "' has no counterpart in the model");
    }
    const auto& w = params.get(layer.name + ".weight");
    const std::size_t r = lora.spec.rank;
    if (layer.a.shape() != Shape{r, w.dim(1)} || layer.b.shape() != Shape{w.dim(0), r}) {
      throw StructureError("adapter layer '" + layer.name + "' shapes " +
                           shape_str(layer.a.shape()) + ", " + shape_str(layer.b.shape()) +
                           " do not fit weight " + shape_str(w.shape()));
    }
  }
}

template <typename T>
void save_lora(const std::filesystem::path& dir, const LoraWeights<T>& lora) {
  TensorBundle<T> bundle;
  bundle.kind = "lora";
  bundle.meta = {{"spec", lora.spec},
                 {"seed", lora.seed},
                 {"model_depth", lora.model_depth},
                 {"model_dim", lora.model_dim},
                 {"dtype", dtype_name(dtype_of<T>())}};
  Json layers = Json::array();
  for (const auto& l : lora.layers) layers.push_back(l.name);
  bundle.meta["layers"] = layers;
  for (const auto& [name, v] : lora.named_parameters()) bundle.tensors.emplace_back(name, v.value());
  save_bundle(dir, bundle);
}

template <typename T>
LoraWeights<T> load_lora(const std::filesystem::path& dir) {
  const auto bundle = load_bundle<T>(dir, "lora");
  LoraWeights<T> lora;
  std::vector<std::string> names;
  try {
    lora.spec = bundle.meta.at("spec").template get<LoraSpec>();
    lora.seed = bundle.meta.at("seed").template get<std::uint64_t>();
    lora.model_depth = bundle.meta.at("model_depth").template get<std::size_t>();
    lora.model_dim = bundle.meta.at("model_dim").template get<std::size_t>();
    names = bundle.meta.at("layers").template get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("adapter metadata: ") + e.what());
  }
  if (bundle.tensors.size() != 2 * names.size()) {
    throw StructureError("adapter bundle tensor count does not match its layer list");
  }
  for (const auto& name : names) {
    lora.layers.push_back({name, Var<T>::parameter(bundle.at(name + ".lora_a")),
                           Var<T>::parameter(bundle.at(name + ".lora_b"))});
  }
  return lora;
}

template <typename T>
LoraWeights<T> load_lora(const std::filesystem::path& dir, const DiTParameters<T>& target) {
  auto lora = load_lora<T>(dir);
  check_lora_matches(target, lora);
  return lora;
}

#define ICV_INSTANTIATE_LORA(T)                                                                 \
  template struct LoraWeights<T>;                                                               \
  template LoraWeights<T> inject(const DiTParameters<T>&, const LoraSpec&, std::uint64_t);      \
  template Var<T> lora_delta(const Var<T>&, const LoraLayer<T>&, T);                            \
  template DiTParameters<T> merge(const DiTParameters<T>&, const LoraWeights<T>&);              \
  template DiTParameters<T> unmerge(const DiTParameters<T>&, const LoraWeights<T>&);            \
  template void check_lora_matches(const DiTParameters<T>&, const LoraWeights<T>&);             \
  template void save_lora(const std::filesystem::path&, const LoraWeights<T>&);                 \
  template LoraWeights<T> load_lora(const std::filesystem::path&);                              \
  template LoraWeights<T> load_lora(const std::filesystem::path&, const DiTParameters<T>&);

ICV_INSTANTIATE_LORA(float)
ICV_INSTANTIATE_LORA(double)

}  // namespace icv
