// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "doctest.h"
#include "icv/errors.hpp"
#include "icv/prompt.hpp"
#include "support.hpp"

using namespace icv;
using icv::testing::random_tensor;

namespace {

// Text over an alphabet rich in near-delimiters, with reserved tags removed.
std::string fuzz_text(Rng& rng) {
  static const std::vector<std::string> pieces = {
      "a", "b", "Z", " ", "  ", "[", "]", "-", "1", "9", "SET", "SCENE", "[SCENE", "SET]", "[SE", "\t", "\xc3\xa9", "cat"};
  std::string s;
  const std::size_t n = rng.below(12);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.below(pieces.size())];
  for (;;) {
    auto p = s.find("[SET]");
    if (p == std::string::npos) p = s.find("[SCENE-");
    if (p == std::string::npos) break;
    s.erase(p, 1);
  }
  return s;
}

PromptSet fuzz_prompt(Rng& rng) {
  PromptSet p;
  p.overall = fuzz_text(rng);
  const std::size_t n = 1 + rng.below(9);
  for (std::size_t i = 0; i < n; ++i) p.per_panel.push_back(fuzz_text(rng));
  return p;
}

std::size_t parse_error_position(const std::string& text) {
  try {
    parse_prompt(text);
  } catch (const ParseError& e) {
    return e.position();
  }
  FAIL("accepted malformed prompt: " << text);
  return 0;
}

}  // namespace

TEST_CASE("compose example") {
  CHECK(compose_prompt({"two views", {"a cat", "a dog"}}) == "[SET] two views [SCENE-1] a cat [SCENE-2] a dog");
  CHECK_THROWS_AS(compose_prompt({"x", {}}), ValidationError);
  CHECK_THROWS_AS(compose_prompt({"has [SET] inside", {"a"}}), ValidationError);
  CHECK_THROWS_AS(compose_prompt({"x", {"a", "b [SCENE-3] c"}}), ValidationError);
}

TEST_CASE("parse examples") {
  CHECK(parse_prompt("[SET] x [SCENE-1] y") == PromptSet{"x", {"y"}});
  CHECK_THROWS_AS(parse_prompt("[SCENE-1] y"), ParseError);
  try {
    parse_prompt("[SET] x [SCENE-1] y [SCENE-3] z");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[SCENE-2]") != std::string::npos);
    CHECK(msg.find("[SCENE-3]") != std::string::npos);
    CHECK(e.position() == 20);
  }
}

TEST_CASE("compose/parse round trip on fuzzed prompt sets") {
  Rng rng(0x9a55);
  int failures = 0;
  for (int i = 0; i < 1000; ++i) {
    const PromptSet p = fuzz_prompt(rng);
    if (parse_prompt(compose_prompt(p)) != p) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("malformed prompts report positions") {
  CHECK(parse_error_position("") == 0);
  CHECK(parse_error_position("[SCENE-1] y") == 0);
  CHECK(parse_error_position("[SET]x [SCENE-1] y") == 5);
  CHECK(parse_error_position("[SET] x") == 7);
  CHECK(parse_error_position("[SET] x [SCENE-2] y") == 8);
  CHECK(parse_error_position("[SET] x [SCENE-a] y") == 15);
  CHECK(parse_error_position("[SET] x [SCENE-1 y") == 8);
  CHECK(parse_error_position("[SET] x [SCENE-] y") == 8);
  CHECK(parse_error_position("[SET] x [SCENE-1]y") == 17);
  CHECK(parse_error_position("[SET] x [SCENE-1]") == 17);
  CHECK(parse_error_position("[SET] x[SCENE-1] y") == 7);
  CHECK(parse_error_position("[SET] x [SET] [SCENE-1] y") == 8);
}

TEST_CASE("fnv-1a reference vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("tokenizer") {
  const auto ids = tokenize("A  Red\tsquare", kDefaultVocabSize, 64);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == token_id("a", kDefaultVocabSize));
  CHECK(ids[1] == token_id("red", kDefaultVocabSize));
  CHECK(ids[2] == token_id("square", kDefaultVocabSize));
  CHECK(tokenize("", kDefaultVocabSize, 64) == std::vector<std::int32_t>{kEmptyToken});
  CHECK(tokenize("   ", kDefaultVocabSize, 64) == std::vector<std::int32_t>{kEmptyToken});

  std::string long_text;
  for (int i = 0; i < 100; ++i) long_text += "w" + std::to_string(i) + " ";
  CHECK(tokenize(long_text, kDefaultVocabSize, 64).size() == 64);

  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto id = token_id(fuzz_text(rng), kDefaultVocabSize);
    CHECK(id >= 2);
    CHECK(id < static_cast<std::int32_t>(kDefaultVocabSize));
  }
}

TEST_CASE("encode_text") {
  Rng rng(5);
  const std::size_t dim = 16, vocab = 97;
  const auto table = random_tensor<float>({vocab, dim}, rng);
  const auto pe = text_position_signal<float>(kDefaultTextLength, dim);

  const auto a = encode_text("a red square", vocab, dim, table);
  const auto b = encode_text("a red square", vocab, dim, table);
  CHECK(a.values == b.values);
  CHECK(a.ids == b.ids);
  CHECK(a.length() == kDefaultTextLength);
  CHECK(a.valid_count() == 3);
  for (std::size_t pos = 3; pos < a.length(); ++pos) {
    CHECK(a.ids[pos] == -1);
    for (std::size_t j = 0; j < dim; ++j) CHECK(a.values[pos * dim + j] == 0.0f);
  }

  const auto empty = encode_text("", vocab, dim, table);
  CHECK(empty.valid_count() == 1);
  CHECK(empty.ids[0] == kEmptyToken);

  // Same token at positions 0 and 1: removing the positional signal leaves
  // the same table row.
  const auto cc = encode_text("cat cat", vocab, dim, table);
  const auto row = static_cast<std::size_t>(token_id("cat", vocab));
  for (std::size_t j = 0; j < dim; ++j) {
    const float t = table[row * dim + j];
    CHECK(std::abs(cc.values[j] - pe[j] - t) < 1e-6);
    CHECK(std::abs(cc.values[dim + j] - pe[dim + j] - t) < 1e-6);
    CHECK(std::abs((cc.values[dim + j] - cc.values[j]) - (pe[dim + j] - pe[j])) < 1e-6);
  }
}

TEST_CASE("null prompt") {
  Rng rng(6);
  const std::size_t dim = 8, vocab = 50;
  const auto table = random_tensor<float>({vocab, dim}, rng);
  const auto n1 = null_prompt(dim, table);
  const auto n2 = null_prompt(dim, table);
  CHECK(n1.values == n2.values);
  CHECK(n1.ids[0] == kNullToken);
  CHECK(n1.valid_count() == 1);
  const auto e = encode_text("", vocab, dim, table);
  CHECK(n1.ids != e.ids);
  CHECK_FALSE(n1.values == e.values);
}

TEST_CASE("positional signal") {
  const auto pe = text_position_signal<double>(4, 6);
  // Even columns sin(pos * 10000^(-i/dim)), odd columns cos of the same angle.
  for (std::size_t pos = 0; pos < 4; ++pos) {
    for (std::size_t i = 0; i < 6; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / 6.0);
      CHECK(pe[pos * 6 + i] == doctest::Approx(std::sin(angle)).epsilon(1e-14));
      CHECK(pe[pos * 6 + i + 1] == doctest::Approx(std::cos(angle)).epsilon(1e-14));
    }
  }
}
