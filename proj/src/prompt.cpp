// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/prompt.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

namespace icv {

namespace {

constexpr std::string_view kSetTag = "[SET]";
constexpr std::string_view kScenePrefix = "[SCENE-";

}  // namespace

void check_delimiter_free(std::string_view text, std::string_view what) {
  for (auto tag : {kSetTag, kScenePrefix}) {
    const auto pos = text.find(tag);
    if (pos != std::string_view::npos) {
      throw ValidationError(std::string(what) + " contains reserved token '" + std::string(tag) +
                            "' at offset " + std::to_string(pos));
    }
  }
}

std::string compose_prompt(const PromptSet& prompts) {
  if (prompts.per_panel.empty()) {
    throw ValidationError("a prompt set needs at least one panel prompt");
  }
  check_delimiter_free(prompts.overall, "overall prompt");
  std::string out = std::string(kSetTag) + " " + prompts.overall;
  for (std::size_t k = 0; k < prompts.per_panel.size(); ++k) {
    check_delimiter_free(prompts.per_panel[k], "panel prompt " + std::to_string(k + 1));
    out += " ";
    out += kScenePrefix;
    out += std::to_string(k + 1) + "] " + prompts.per_panel[k];
  }
  return out;
}

PromptSet parse_prompt(std::string_view text) {
  if (text.substr(0, kSetTag.size()) != kSetTag) throw ParseError("prompt must begin with [SET]", 0);
  if (text.size() == kSetTag.size() || text[kSetTag.size()] != ' ') {
    throw ParseError("expected a space after [SET]", kSetTag.size());
  }
  const auto stray_set = text.find(kSetTag, kSetTag.size());

  PromptSet out;
  std::size_t content_begin = kSetTag.size() + 1;
  std::size_t marker = text.find(kScenePrefix, content_begin - 1);
  if (marker == std::string_view::npos) throw ParseError("prompt has no [SCENE-1]", text.size());
  if (stray_set != std::string_view::npos) throw ParseError("repeated [SET] tag", stray_set);

  std::string* current = &out.overall;
  std::size_t expected = 1;
  while (marker != std::string_view::npos) {
    if (marker < content_begin || text[marker - 1] != ' ') {
      throw ParseError("expected a space before scene tag", marker);
    }
    *current = std::string(text.substr(content_begin, marker - 1 - content_begin));

    const std::size_t num_begin = marker + kScenePrefix.size();
    const std::size_t close = text.find(']', num_begin);
    if (close == std::string_view::npos || close == num_begin) {
      throw ParseError("malformed scene tag", marker);
    }
    std::size_t index = 0;
    auto [ptr, ec] = std::from_chars(text.data() + num_begin, text.data() + close, index);
    if (ec != std::errc() || ptr != text.data() + close) {
      throw ParseError("non-numeric scene index", num_begin);
    }
    if (index != expected) {
      throw ParseError("scene numbering gap: expected [SCENE-" + std::to_string(expected) +
                           "], found [SCENE-" + std::to_string(index) + "]",
                       marker);
    }
    if (close + 1 >= text.size() || text[close + 1] != ' ') {
      throw ParseError("expected a space after scene tag", close + 1);
    }
    out.per_panel.emplace_back();
    current = &out.per_panel.back();
    content_begin = close + 2;
    ++expected;
    marker = text.find(kScenePrefix, content_begin);
  }
  *current = std::string(text.substr(content_begin));
  return out;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::int32_t token_id(std::string_view token, std::size_t vocab_size) {
  if (vocab_size < 3) throw ConfigError("vocab_size must be at least 3");
  return static_cast<std::int32_t>(2 + fnv1a64(token) % (vocab_size - 2));
}

std::vector<std::int32_t> tokenize(std::string_view text, std::size_t vocab_size,
                                   std::size_t max_len) {
  std::vector<std::int32_t> ids;
  std::string tok;
  auto flush = [&] {
    if (!tok.empty() && ids.size() < max_len) ids.push_back(token_id(tok, vocab_size));
    tok.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else {
      tok.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  if (ids.empty()) ids.push_back(kEmptyToken);
  return ids;
}

std::size_t TextEmbedding::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v;
  return n;
}

template <typename T>
Tensor<T> text_position_signal(std::size_t length, std::size_t dim) {
  Tensor<T> pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

namespace {

TextEmbedding pad(std::vector<std::int32_t> ids, std::size_t length) {
  TextEmbedding e;
  e.ids.assign(length, -1);
  e.valid.assign(length, 0);
  for (std::size_t i = 0; i < ids.size() && i < length; ++i) {
    e.ids[i] = ids[i];
    e.valid[i] = 1;
  }
  return e;
}

void fill_values(TextEmbedding& e, std::size_t dim, const Tensor<float>& table) {
  if (table.rank() != 2 || table.dim(1) != dim) {
    throw DimensionError("embedding table " + shape_str(table.shape()) + " does not have width " +
                         std::to_string(dim));
  }
  const auto pe = text_position_signal<float>(e.length(), dim);
  e.values = Tensor<float>({e.length(), dim});
  for (std::size_t pos = 0; pos < e.length(); ++pos) {
    if (!e.valid[pos]) continue;
    const auto row = static_cast<std::size_t>(e.ids[pos]);
    if (row >= table.dim(0)) throw BoundsError("token id outside embedding table");
    for (std::size_t j = 0; j < dim; ++j) {
      e.values[pos * dim + j] = table[row * dim + j] + pe[pos * dim + j];
    }
  }
}

}  // namespace

TextEmbedding text_tokens(std::string_view text, std::size_t vocab_size, std::size_t length) {
  return pad(tokenize(text, vocab_size, length), length);
}

TextEmbedding null_tokens(std::size_t length) { return pad({kNullToken}, length); }

TextEmbedding encode_text(std::string_view text, std::size_t vocab_size, std::size_t dim,
                          const Tensor<float>& table, std::size_t length) {
  auto e = text_tokens(text, vocab_size, length);
  fill_values(e, dim, table);
  return e;
}

TextEmbedding null_prompt(std::size_t dim, const Tensor<float>& table, std::size_t length) {
  auto e = null_tokens(length);
  fill_values(e, dim, table);
  return e;
}

template Tensor<float> text_position_signal(std::size_t, std::size_t);
template Tensor<double> text_position_signal(std::size_t, std::size_t);

}  // namespace icv
