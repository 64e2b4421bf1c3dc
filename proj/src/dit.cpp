// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/dit.hpp"

#include <cmath>

#include "icv/lora.hpp"
#include "icv/rng.hpp"

namespace icv {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (dim == 0 || depth == 0 || heads == 0) fail("dim, depth and heads must be positive");
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " not divisible by heads " +
                              std::to_string(heads));
  if (patch_t == 0 || patch_h == 0 || patch_w == 0) fail("patch sizes must be positive");
  if (max_frames % patch_t || max_height % patch_h || max_width % patch_w) {
    fail("maximum extents must be divisible by the patch sizes");
  }
  if (text_len == 0) fail("text_len must be positive");
  if (vocab_size < 3) fail("vocab_size must be at least 3");
  if (channels == 0 || mlp_ratio == 0 || timesteps == 0) fail("channels, mlp_ratio, timesteps must be positive");
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"dim", c.dim},
           {"depth", c.depth},
           {"heads", c.heads},
           {"patch_t", c.patch_t},
           {"patch_h", c.patch_h},
           {"patch_w", c.patch_w},
           {"text_len", c.text_len},
           {"vocab_size", c.vocab_size},
           {"channels", c.channels},
           {"max_frames", c.max_frames},
           {"max_height", c.max_height},
           {"max_width", c.max_width},
           {"mlp_ratio", c.mlp_ratio},
           {"timesteps", c.timesteps}};
}

void from_json(const Json& j, ModelConfig& c) {
  j.at("dim").get_to(c.dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("patch_t").get_to(c.patch_t);
  j.at("patch_h").get_to(c.patch_h);
  j.at("patch_w").get_to(c.patch_w);
  j.at("text_len").get_to(c.text_len);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("channels").get_to(c.channels);
  j.at("max_frames").get_to(c.max_frames);
  j.at("max_height").get_to(c.max_height);
  j.at("max_width").get_to(c.max_width);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("timesteps").get_to(c.timesteps);
}

PatchGrid patch_grid(const ModelConfig& cfg, std::size_t frames, std::size_t height,
                     std::size_t width) {
  if (frames % cfg.patch_t || height % cfg.patch_h || width % cfg.patch_w) {
    throw ConfigError("extents " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                      std::to_string(width) + " not divisible by patch (" +
                      std::to_string(cfg.patch_t) + "," + std::to_string(cfg.patch_h) + "," +
                      std::to_string(cfg.patch_w) + ")");
  }
  return {frames / cfg.patch_t, height / cfg.patch_h, width / cfg.patch_w};
}

namespace {

struct VideoDims {
  std::size_t batch, frames, channels, height, width;
};

VideoDims video_dims(const Shape& s) {
  if (s.size() == 5) return {s[0], s[1], s[2], s[3], s[4]};
  if (s.size() == 4) return {1, s[0], s[1], s[2], s[3]};
  throw DimensionError("expected [B, F, C, H, W] or [F, C, H, W], got " + shape_str(s));
}

// Flat video index for every element of the [B, N, P] token tensor.
std::shared_ptr<const std::vector<std::size_t>> patch_index(const ModelConfig& cfg,
                                                            const VideoDims& v) {
  const PatchGrid g = patch_grid(cfg, v.frames, v.height, v.width);
  const std::size_t pt = cfg.patch_t, ph = cfg.patch_h, pw = cfg.patch_w;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(v.batch * v.frames * v.channels * v.height * v.width);
  for (std::size_t b = 0; b < v.batch; ++b) {
    for (std::size_t gf = 0; gf < g.frames; ++gf) {
      for (std::size_t gr = 0; gr < g.rows; ++gr) {
        for (std::size_t gc = 0; gc < g.cols; ++gc) {
          for (std::size_t dt = 0; dt < pt; ++dt) {
            for (std::size_t c = 0; c < v.channels; ++c) {
              for (std::size_t dy = 0; dy < ph; ++dy) {
                for (std::size_t dx = 0; dx < pw; ++dx) {
                  const std::size_t f = gf * pt + dt, y = gr * ph + dy, x = gc * pw + dx;
                  idx->push_back((((b * v.frames + f) * v.channels + c) * v.height + y) * v.width + x);
                }
              }
            }
          }
        }
      }
    }
  }
  return idx;
}

std::shared_ptr<const std::vector<std::size_t>> invert(const std::vector<std::size_t>& idx) {
  auto inv = std::make_shared<std::vector<std::size_t>>(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) (*inv)[idx[i]] = i;
  return inv;
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, const ModelConfig& cfg) {
  const VideoDims v = video_dims(x.shape());
  if (v.channels != cfg.channels) {
    throw ConfigError("input has " + std::to_string(v.channels) + " channels, model expects " +
                      std::to_string(cfg.channels));
  }
  const PatchGrid g = patch_grid(cfg, v.frames, v.height, v.width);
  const auto idx = patch_index(cfg, v);
  Tensor<T> out({v.batch, g.tokens(), cfg.patch_dim()});
  for (std::size_t i = 0; i < idx->size(); ++i) out[i] = x[(*idx)[i]];
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, const ModelConfig& cfg, std::size_t frames,
                     std::size_t height, std::size_t width) {
  if (tokens.rank() != 3) throw DimensionError("unpatchify expects [B, N, P]");
  const VideoDims v{tokens.dim(0), frames, cfg.channels, height, width};
  const PatchGrid g = patch_grid(cfg, frames, height, width);
  if (tokens.dim(1) != g.tokens() || tokens.dim(2) != cfg.patch_dim()) {
    throw DimensionError("token tensor " + shape_str(tokens.shape()) +
                         " does not match the requested video extents");
  }
  const auto idx = patch_index(cfg, v);
  Tensor<T> out({v.batch, frames, cfg.channels, height, width});
  for (std::size_t i = 0; i < idx->size(); ++i) out[(*idx)[i]] = tokens[i];
  return out;
}

template <typename T>
void DiTParameters<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw StructureError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, Var<T>::parameter(std::move(value)));
}

template <typename T>
const Var<T>& DiTParameters<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StructureError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t DiTParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void DiTParameters<T>::set_trainable(bool on) {
  for (auto& e : entries_) e.second.set_requires_grad(on);
}

template <typename T>
DiTParameters<T> DiTParameters<T>::clone() const {
  DiTParameters out(config_, seed_);
  for (const auto& [name, v] : entries_) {
    out.add(name, v.value());
    out.entries_.back().second.set_requires_grad(v.requires_grad());
  }
  return out;
}

std::vector<std::string> block_linear_names(std::size_t block) {
  const std::string p = "blocks." + std::to_string(block) + ".";
  return {p + "attn.qkv", p + "attn.out", p + "mlp.fc1", p + "mlp.fc2"};
}

template <typename T>
DiTParameters<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DiTParameters<T> params(cfg, seed);
  Rng rng(mix_seed(seed, 0x1d17));
  const std::size_t d = cfg.dim, hidden = cfg.mlp_ratio * cfg.dim;
  auto trunc = [&](Shape s, double sigma = 0.02) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(sigma));
    return t;
  };
  auto zeros = [](Shape s) { return Tensor<T>(std::move(s)); };
  auto linear = [&](const std::string& name, std::size_t out, std::size_t in, bool zero) {
    params.add(name + ".weight", zero ? zeros({out, in}) : trunc({out, in}));
    params.add(name + ".bias", zeros({out}));
  };

  linear("patch_embed", d, cfg.patch_dim(), false);
  params.add("pos.frame", trunc({cfg.max_frames / cfg.patch_t, d}));
  params.add("pos.row", trunc({cfg.max_height / cfg.patch_h, d}));
  params.add("pos.col", trunc({cfg.max_width / cfg.patch_w, d}));
  // Unit scale, matching the positional signal added to every token.
  params.add("text.table", trunc({cfg.vocab_size, d}, 1.0));
  linear("text_proj", d, d, false);
  linear("time.fc1", d, d, false);
  linear("time.fc2", d, d, false);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    linear(p + "adaln", 6 * d, d, true);
    linear(p + "attn.qkv", 3 * d, d, false);
    linear(p + "attn.out", d, d, false);
    linear(p + "mlp.fc1", hidden, d, false);
    linear(p + "mlp.fc2", d, hidden, false);
  }
  linear("final.adaln", 2 * d, d, true);
  linear("final.proj", cfg.patch_dim(), d, true);
  return params;
}

TextBatch TextBatch::from(std::span<const TextEmbedding> texts) {
  TextBatch tb;
  tb.batch = texts.size();
  if (texts.empty()) return tb;
  tb.length = texts[0].length();
  for (const auto& t : texts) {
    if (t.length() != tb.length || t.valid.size() != tb.length) {
      throw DimensionError("text embeddings in one batch must share a length");
    }
    tb.ids.insert(tb.ids.end(), t.ids.begin(), t.ids.end());
    tb.valid.insert(tb.valid.end(), t.valid.begin(), t.valid.end());
  }
  return tb;
}

template <typename T>
Tensor<T> timestep_features(std::span<const int> timesteps, std::size_t dim) {
  Tensor<T> out({timesteps.size(), dim});
  const std::size_t half = dim / 2;
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = static_cast<double>(timesteps[b]) * freq;
      out[b * dim + i] = static_cast<T>(std::cos(a));
      out[b * dim + half + i] = static_cast<T>(std::sin(a));
    }
  }
  return out;
}

namespace {

template <typename T>
Var<T> project(const DiTParameters<T>& params, const std::string& name, const Var<T>& x) {
  return linear(x, params.get(name + ".weight"), params.get(name + ".bias"));
}

template <typename T>
Var<T> project(const DiTParameters<T>& params, const std::string& name, const Var<T>& x,
               const LoraWeights<T>* lora) {
  Var<T> y = linear(x, params.get(name + ".weight"), params.get(name + ".bias"));
  if (lora) {
    if (const auto* layer = lora->find(name)) y = add(y, lora_delta(x, *layer, lora->scaling()));
  }
  return y;
}

}  // namespace

template <typename T>
Var<T> dit_forward(const DiTParameters<T>& params, const Tensor<T>& x,
                   std::span<const int> timesteps, const TextBatch& text,
                   const LoraWeights<T>* lora) {
  const ModelConfig& cfg = params.config();
  const VideoDims v = video_dims(x.shape());
  if (timesteps.size() != v.batch) {
    throw DimensionError("got " + std::to_string(timesteps.size()) + " timesteps for a batch of " +
                         std::to_string(v.batch));
  }
  for (int t : timesteps) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.timesteps) {
      throw BoundsError("timestep " + std::to_string(t) + " outside [0, " +
                        std::to_string(cfg.timesteps) + ")");
    }
  }
  if (text.batch != v.batch || text.length != cfg.text_len) {
    throw DimensionError("text batch " + std::to_string(text.batch) + "x" +
                         std::to_string(text.length) + " does not match batch " +
                         std::to_string(v.batch) + " and text_len " + std::to_string(cfg.text_len));
  }
  if (v.frames > cfg.max_frames || v.height > cfg.max_height || v.width > cfg.max_width) {
    throw ConfigError("composite exceeds the model's maximum extents");
  }
  const PatchGrid grid = patch_grid(cfg, v.frames, v.height, v.width);
  const std::size_t d = cfg.dim, n = grid.tokens(), batch = v.batch;

  const auto idx = patch_index(cfg, v);
  Tensor<T> tok({batch, n, cfg.patch_dim()});
  for (std::size_t i = 0; i < idx->size(); ++i) tok[i] = x[(*idx)[i]];
  Var<T> h = project(params, "patch_embed", Var<T>::constant(std::move(tok)));
  h = add_factorized_pos(h, params.get("pos.frame"), params.get("pos.row"), params.get("pos.col"),
                         grid.frames, grid.rows, grid.cols);

  // Trailing positions that are padding for every sample are dropped; they
  // would be masked out of attention anyway.
  std::size_t text_used = 1;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < text.length; ++i) {
      if (text.valid[b * text.length + i]) text_used = std::max(text_used, i + 1);
    }
  }
  std::vector<std::int32_t> ids(batch * text_used);
  std::vector<std::uint8_t> key_valid(batch * (text_used + n), 1);
  Tensor<T> signal({batch, text_used, d});
  const auto pe = text_position_signal<T>(text_used, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < text_used; ++i) {
      const bool valid = text.valid[b * text.length + i] != 0;
      ids[b * text_used + i] = text.ids[b * text.length + i];
      key_valid[b * (text_used + n) + i] = valid ? 1 : 0;
      if (valid) std::copy_n(pe.ptr() + i * d, d, signal.ptr() + (b * text_used + i) * d);
    }
  }
  Var<T> te = embedding(params.get("text.table"), std::span<const std::int32_t>(ids), batch);
  te = add_const(te, signal);
  te = project(params, "text_proj", te);
  Var<T> seq = concat_seq(te, h);

  Var<T> c = Var<T>::constant(timestep_features<T>(timesteps, d));
  c = project(params, "time.fc2", silu(project(params, "time.fc1", c)));
  const Var<T> c_act = silu(c);

  const Var<T> none;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    const Var<T> mod = project(params, p + "adaln", c_act);
    const Var<T> shift1 = slice_cols(mod, 0, d), scale1 = slice_cols(mod, d, d),
                 gate1 = slice_cols(mod, 2 * d, d), shift2 = slice_cols(mod, 3 * d, d),
                 scale2 = slice_cols(mod, 4 * d, d), gate2 = slice_cols(mod, 5 * d, d);

    Var<T> a = modulate(layer_norm(seq, none, none, T(1e-5)), shift1, scale1);
    a = project(params, p + "attn.qkv", a, lora);
    a = attention(a, cfg.heads, std::span<const std::uint8_t>(key_valid));
    a = project(params, p + "attn.out", a, lora);
    seq = gated_add(seq, gate1, a);

    Var<T> m = modulate(layer_norm(seq, none, none, T(1e-5)), shift2, scale2);
    m = gelu_tanh(project(params, p + "mlp.fc1", m, lora));
    m = project(params, p + "mlp.fc2", m, lora);
    seq = gated_add(seq, gate2, m);
  }

  const Var<T> mod = project(params, "final.adaln", c_act);
  Var<T> y = slice_seq(seq, text_used, n);
  y = modulate(layer_norm(y, none, none, T(1e-5)), slice_cols(mod, 0, d), slice_cols(mod, d, d));
  y = project(params, "final.proj", y);
  Shape out_shape = x.shape().size() == 5
                        ? x.shape()
                        : Shape{1, v.frames, v.channels, v.height, v.width};
  return gather_index(y, std::move(out_shape), invert(*idx));
}

template <typename T>
TensorBundle<T> params_to_bundle(const DiTParameters<T>& params) {
  TensorBundle<T> bundle;
  bundle.kind = "model";
  bundle.meta = {{"config", params.config()},
                 {"seed", params.seed()},
                 {"dtype", dtype_name(dtype_of<T>())}};
  for (const auto& [name, v] : params.entries()) bundle.tensors.emplace_back(name, v.value());
  return bundle;
}

template <typename T>
DiTParameters<T> params_from_bundle(const TensorBundle<T>& bundle) {
  ModelConfig cfg;
  std::uint64_t seed = 0;
  try {
    cfg = bundle.meta.at("config").template get<ModelConfig>();
    seed = bundle.meta.at("seed").template get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("model checkpoint metadata: ") + e.what());
  }
  cfg.validate();
  DiTParameters<T> fresh = init_params<T>(cfg, seed);
  if (fresh.entries().size() != bundle.tensors.size()) {
    throw StructureError("checkpoint has " + std::to_string(bundle.tensors.size()) +
                         " tensors, model structure expects " +
                         std::to_string(fresh.entries().size()));
  }
  DiTParameters<T> out(cfg, seed);
  for (const auto& [name, v] : fresh.entries()) {
    const auto& t = bundle.at(name);
    if (t.shape() != v.shape()) {
      throw StructureError("parameter '" + name + "' has shape " + shape_str(t.shape()) +
                           ", expected " + shape_str(v.shape()));
    }
    out.add(name, t);
  }
  return out;
}

template <typename T>
void save_model(const std::filesystem::path& dir, const DiTParameters<T>& params,
                const Json& extra_meta) {
  auto bundle = params_to_bundle(params);
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) bundle.meta[it.key()] = it.value();
  save_bundle(dir, bundle);
}

template <typename T>
DiTParameters<T> load_model(const std::filesystem::path& dir) {
  return params_from_bundle(load_bundle<T>(dir, "model"));
}

#define ICV_INSTANTIATE_DIT(T)                                                                \
  template Tensor<T> patchify(const Tensor<T>&, const ModelConfig&);                          \
  template Tensor<T> unpatchify(const Tensor<T>&, const ModelConfig&, std::size_t,            \
                                std::size_t, std::size_t);                                    \
  template class DiTParameters<T>;                                                            \
  template DiTParameters<T> init_params(const ModelConfig&, std::uint64_t);                   \
  template Tensor<T> timestep_features(std::span<const int>, std::size_t);                    \
  template Var<T> dit_forward(const DiTParameters<T>&, const Tensor<T>&, std::span<const int>, \
                              const TextBatch&, const LoraWeights<T>*);                       \
  template TensorBundle<T> params_to_bundle(const DiTParameters<T>&);                         \
  template DiTParameters<T> params_from_bundle(const TensorBundle<T>&);                       \
  template void save_model(const std::filesystem::path&, const DiTParameters<T>&, const Json&); \
  template DiTParameters<T> load_model(const std::filesystem::path&);

ICV_INSTANTIATE_DIT(float)
ICV_INSTANTIATE_DIT(double)

}  // namespace icv
