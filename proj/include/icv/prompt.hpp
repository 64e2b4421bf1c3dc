// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "icv/tensor.hpp"

namespace icv {

// One overall description plus one text per panel, index-aligned with the
// panel slots of the paired composite.
struct PromptSet {
  std::string overall;
  std::vector<std::string> per_panel;

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

// Unified prompt wire format:
//   "[SET] {overall} [SCENE-1] {p1} [SCENE-2] {p2} ..."
// Any text containing "[SET]" or "[SCENE-" is rejected.
std::string compose_prompt(const PromptSet& prompts);
PromptSet parse_prompt(std::string_view text);

// Throws ValidationError when `text` contains a reserved delimiter.
void check_delimiter_free(std::string_view text, std::string_view what);

// Hashed-vocabulary tokenizer. Rows 0 and 1 of the embedding table are the
// reserved NULL and EMPTY tokens; ordinary tokens hash (FNV-1a 64) into the
// remaining vocab_size - 2 rows.
inline constexpr std::int32_t kNullToken = 0;
inline constexpr std::int32_t kEmptyToken = 1;
inline constexpr std::size_t kDefaultTextLength = 64;
inline constexpr std::size_t kDefaultVocabSize = 8192;

std::uint64_t fnv1a64(std::string_view s);
std::int32_t token_id(std::string_view token, std::size_t vocab_size);

// Lowercased whitespace tokens, truncated to max_len; "" -> [EMPTY].
std::vector<std::int32_t> tokenize(std::string_view text, std::size_t vocab_size,
                                   std::size_t max_len);

// Fixed-width text conditioning. Padded positions hold id -1, valid = 0 and
// all-zero rows in `values`.
struct TextEmbedding {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> valid;
  Tensor<float> values;  // [L, D]

  std::size_t length() const { return ids.size(); }
  std::size_t valid_count() const;
};

// Sinusoidal signal added to every valid text position.
template <typename T>
Tensor<T> text_position_signal(std::size_t length, std::size_t dim);

// Padded id/valid vectors without values; the model gathers its own rows.
TextEmbedding text_tokens(std::string_view text, std::size_t vocab_size, std::size_t length);
TextEmbedding null_tokens(std::size_t length);

TextEmbedding encode_text(std::string_view text, std::size_t vocab_size, std::size_t dim,
                          const Tensor<float>& table, std::size_t length = kDefaultTextLength);
TextEmbedding null_prompt(std::size_t dim, const Tensor<float>& table,
                          std::size_t length = kDefaultTextLength);

}  // namespace icv
