// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "icv/autograd.hpp"
#include "icv/optim.hpp"
#include "icv/serialize.hpp"
#include "support.hpp"

using namespace icv;
using icv::testing::numeric_grad;
using icv::testing::random_tensor;
using icv::testing::rel_error;

namespace {

using VarD = Var<double>;
using Builder = std::function<VarD(const std::vector<VarD>&)>;

// Largest relative gradient error of loss = sum(f(inputs) * R) over inputs.
double op_grad_error(const Builder& f, std::vector<Tensor<double>> inputs, Rng& rng) {
  Tensor<double> r;
  {
    NoGradGuard g;
    std::vector<VarD> c;
    for (auto& t : inputs) c.push_back(VarD::constant(t));
    r = random_tensor<double>(f(c).shape(), rng);
  }
  std::vector<VarD> params;
  for (auto& t : inputs) params.push_back(VarD::parameter(t));
  backward(sum(mul(f(params), VarD::constant(r))));

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto value = [&]() {
      NoGradGuard g;
      std::vector<VarD> c;
      for (auto& t : inputs) c.push_back(VarD::constant(t));
      return sum(mul(f(c), VarD::constant(r))).value().item();
    };
    const Tensor<double> num = numeric_grad(value, inputs[i]);
    const Tensor<double> ana = params[i].has_grad() ? params[i].grad() : Tensor<double>(inputs[i].shape());
    worst = std::max(worst, rel_error(ana, num));
  }
  return worst;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

void check_op(const char* name, int trials,
              const std::function<std::pair<Builder, std::vector<Tensor<double>>>(Rng&)>& make) {
  Rng rng(0xacce55);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto [f, inputs] = make(rng);
    worst = std::max(worst, op_grad_error(f, std::move(inputs), rng));
  }
  INFO(std::string(name) << " worst relative error " << worst);
  CHECK(worst < 1e-6);
}

}  // namespace

TEST_CASE("tensor shape contract") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.data().size() == 24);
  CHECK_THROWS_AS(Tensor<float>({2, 0}), DimensionError);
  CHECK(Tensor<double>::scalar(3.0).item() == 3.0);
}

TEST_CASE("reshape and permute keep the stored multiset") {
  Rng rng(1);
  const auto x = random_tensor<double>({2, 3, 4}, rng);
  const auto back = x.reshape({6, 4}).reshape({24}).reshape({2, 3, 4});
  CHECK(bit_identical(back, x));
  const auto p = x.permute({2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  std::vector<double> a(x.data().begin(), x.data().end()), b(p.data().begin(), p.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK(p[((1 * 2) + 1) * 3 + 2] == x[(1 * 3 + 2) * 4 + 1]);
  CHECK(bit_identical(p.permute({1, 2, 0}), x));
}

TEST_CASE("matmul examples") {
  Rng rng(0);
  const auto x = random_tensor<double>({3, 3}, rng);
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  CHECK(bit_identical(matmul(VarD::constant(eye), VarD::constant(x)).value(), x));

  const auto y = random_tensor<double>({3, 4}, rng);
  const auto z = matmul(VarD::constant(Tensor<double>({2, 3})), VarD::constant(y)).value();
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);

  try {
    matmul(VarD::constant(Tensor<double>({2, 3})), VarD::constant(Tensor<double>({4, 5})));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient against finite differences, seed 0") {
  Rng rng(0);
  auto a = random_tensor<double>({3, 3}, rng);
  const auto b = random_tensor<double>({3, 3}, rng);
  VarD av = VarD::parameter(a);
  backward(sum(matmul(av, VarD::constant(b))));
  const auto num = numeric_grad([&] { return sum(matmul(VarD::constant(a), VarD::constant(b))).value().item(); }, a);
  CHECK(rel_error(av.grad(), num) < 1e-6);
}

TEST_CASE("softmax examples") {
  const auto s = softmax(VarD::constant(Tensor<double>({1, 3}, {2.5, 2.5, 2.5})), 1).value();
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto t = softmax(VarD::constant(Tensor<double>({1, 2}, {0.0, std::log(3.0)})), 1).value();
  CHECK(t[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(t[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK_THROWS_AS(softmax(VarD::constant(Tensor<double>({2, 2})), 2), DimensionError);
}

TEST_CASE("softmax slices are distributions") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tensor<float>({3, 7}, rng, 10.0);
    const auto s = softmax(Var<float>::constant(x), 1).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s[r * 7 + c] >= 0.0f);
        CHECK(s[r * 7 + c] <= 1.0f);
        total += s[r * 7 + c];
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  const VarD gain = VarD::constant(Tensor<double>::full({3}, 1.0));
  const VarD bias = VarD::constant(Tensor<double>({3}));
  const auto z = layer_norm(VarD::constant(Tensor<double>::full({2, 3}, 4.2)), gain, bias).value();
  for (double v : z.data()) CHECK(v == 0.0);
  const auto y = layer_norm(VarD::constant(Tensor<double>({1, 2}, {-1.0, 1.0})), VarD(), VarD()).value();
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("backward examples") {
  Rng rng(2);
  auto x = VarD::parameter(random_tensor<double>({2, 3}, rng));
  backward(sum(x));
  for (double g : x.grad().data()) CHECK(g == 1.0);

  auto y = VarD::parameter(random_tensor<double>({4}, rng));
  backward(sum(mul(y, y)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.grad()[i] == doctest::Approx(2.0 * y.value()[i]));

  CHECK_THROWS_AS(backward(mul(y, y)), ContractError);

  // Uses accumulate additively.
  auto w = VarD::parameter(random_tensor<double>({3}, rng));
  backward(sum(add(w, mul(w, VarD::constant(Tensor<double>::full({3}, 3.0))))));
  for (double g : w.grad().data()) CHECK(g == doctest::Approx(4.0));

  // A detached copy receives nothing and passes nothing back.
  auto v = VarD::parameter(random_tensor<double>({3}, rng));
  backward(sum(mul(v.detach(), VarD::constant(Tensor<double>::full({3}, 2.0)))));
  CHECK_FALSE(v.has_grad());
}

TEST_CASE("topological order visits shared nodes once") {
  auto x = VarD::parameter(Tensor<double>({2}, {1.0, 2.0}));
  auto a = mul(x, x);
  auto b = add(a, x);
  auto c = add(a, b);
  auto root = sum(c);
  const auto order = topological_order(root);
  std::vector<const void*> ptrs(order.begin(), order.end());
  std::sort(ptrs.begin(), ptrs.end());
  CHECK(std::adjacent_find(ptrs.begin(), ptrs.end()) == ptrs.end());
  CHECK(order.back() == root.node().get());
  backward(root);
  // d/dx (2x^2 + x) = 4x + 1
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(9.0));
}

TEST_CASE("no-grad guard records nothing") {
  auto x = VarD::parameter(Tensor<double>({2}, {1.0, 2.0}));
  VarD y;
  {
    NoGradGuard g;
    CHECK_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  CHECK(grad_enabled());
  CHECK(y.node()->parents.empty());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("seeded computation replays bit-identically") {
  auto run = [] {
    Rng rng(77);
    const auto a = random_tensor<float>({16, 33}, rng);
    const auto b = random_tensor<float>({33, 9}, rng);
    auto av = Var<float>::parameter(a);
    auto out = softmax(matmul(av, Var<float>::constant(b)), 1);
    backward(sum(mul(out, out)));
    return std::pair{out.value(), av.grad()};
  };
  const auto [o1, g1] = run();
  const auto [o2, g2] = run();
  CHECK(bit_identical(o1, o2));
  CHECK(bit_identical(g1, g2));
}

// ---- finite-difference suite, 100 seeded trials per op ----------------------

TEST_CASE("op gradients: matmul, linear, elementwise") {
  check_op("matmul", 100, [](Rng& r) {
    const auto m = pick(r, 1, 4), k = pick(r, 1, 4), n = pick(r, 1, 4);
    return std::pair{Builder([](auto& v) { return matmul(v[0], v[1]); }),
                     std::vector{random_tensor<double>({m, k}, r), random_tensor<double>({k, n}, r)}};
  });
  check_op("linear", 100, [](Rng& r) {
    const auto b = pick(r, 1, 3), s = pick(r, 1, 3), in = pick(r, 1, 4), out = pick(r, 1, 4);
    return std::pair{Builder([](auto& v) { return linear(v[0], v[1], v[2]); }),
                     std::vector{random_tensor<double>({b, s, in}, r), random_tensor<double>({out, in}, r),
                                 random_tensor<double>({out}, r)}};
  });
  check_op("add/sub/mul/scale", 100, [](Rng& r) {
    const Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return std::pair{Builder([](auto& v) { return scale(mul(sub(v[0], v[1]), add(v[0], v[1])), 0.7); }),
                     std::vector{random_tensor<double>(s, r), random_tensor<double>(s, r)}};
  });
  check_op("add_const", 100, [](Rng& r) {
    const Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    auto c = random_tensor<double>({s[1]}, r);
    return std::pair{Builder([c](auto& v) { return mul(add_const(v[0], c), v[0]); }),
                     std::vector{random_tensor<double>(s, r)}};
  });
  check_op("sum/mean", 100, [](Rng& r) {
    const Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    return std::pair{Builder([](auto& v) { return add(mean(mul(v[0], v[0])), sum(v[0])); }),
                     std::vector{random_tensor<double>(s, r)}};
  });
  check_op("mse_loss", 100, [](Rng& r) {
    const Shape s{pick(r, 1, 3), pick(r, 1, 4)};
    auto target = random_tensor<double>(s, r);
    return std::pair{Builder([target](auto& v) { return mse_loss(v[0], target); }),
                     std::vector{random_tensor<double>(s, r)}};
  });
}

TEST_CASE("op gradients: softmax, layer_norm, activations") {
  check_op("softmax last axis", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return softmax(v[0], 1); }),
                     std::vector{random_tensor<double>({pick(r, 1, 3), pick(r, 1, 5)}, r)}};
  });
  check_op("softmax axis 0", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return softmax(v[0], 0); }),
                     std::vector{random_tensor<double>({pick(r, 1, 4), pick(r, 1, 3), 2}, r)}};
  });
  check_op("softmax 1x5 row", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return softmax(v[0], 1); }),
                     std::vector{random_tensor<double>({1, 5}, r)}};
  });
  // Two features leave the normalized output nearly flat in x, so the
  // gradient is eps-sized and finite differences lose their digits there.
  check_op("layer_norm affine", 100, [](Rng& r) {
    const auto n = pick(r, 3, 6);
    return std::pair{Builder([](auto& v) { return layer_norm(v[0], v[1], v[2]); }),
                     std::vector{random_tensor<double>({pick(r, 1, 3), n}, r), random_tensor<double>({n}, r),
                                 random_tensor<double>({n}, r)}};
  });
  check_op("layer_norm plain", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return layer_norm(v[0], VarD(), VarD()); }),
                     std::vector{random_tensor<double>({pick(r, 1, 2), pick(r, 1, 3), pick(r, 3, 6)}, r)}};
  });
  check_op("gelu_tanh", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return gelu_tanh(v[0]); }),
                     std::vector{random_tensor<double>({pick(r, 1, 3), pick(r, 1, 5)}, r, 2.0)}};
  });
  check_op("silu", 100, [](Rng& r) {
    return std::pair{Builder([](auto& v) { return silu(v[0]); }),
                     std::vector{random_tensor<double>({pick(r, 1, 3), pick(r, 1, 5)}, r, 2.0)}};
  });
}

TEST_CASE("layer_norm gradient with two features") {
  // y0 = d / sqrt(d^2 + eps), y1 = -y0 with d = (a - b) / 2.
  Rng rng(2);
  const double eps = 1e-5;
  for (int t = 0; t < 100; ++t) {
    const auto x0 = random_tensor<double>({3, 2}, rng);
    const auto r = random_tensor<double>({3, 2}, rng);
    auto x = VarD::parameter(x0);
    backward(sum(mul(layer_norm(x, VarD(), VarD(), eps), VarD::constant(r))));
    for (std::size_t row = 0; row < 3; ++row) {
      const double d = (x0[row * 2] - x0[row * 2 + 1]) / 2.0;
      const double dy = eps / std::pow(d * d + eps, 1.5);
      const double ga = (r[row * 2] - r[row * 2 + 1]) * dy / 2.0;
      CHECK(x.grad()[row * 2] == doctest::Approx(ga).epsilon(1e-9));
      CHECK(x.grad()[row * 2 + 1] == doctest::Approx(-ga).epsilon(1e-9));
    }
  }
}

TEST_CASE("op gradients: shape and sequence ops") {
  check_op("reshape/permute", 100, [](Rng& r) {
    const auto a = pick(r, 1, 3), b = pick(r, 1, 3), c = pick(r, 1, 3);
    return std::pair{Builder([a, b, c](auto& v) {
                       return permute(reshape(v[0], {c, a, b}), std::vector<std::size_t>{2, 0, 1});
                     }),
                     std::vector{random_tensor<double>({a, b, c}, r)}};
  });
  check_op("concat/slice", 100, [](Rng& r) {
    const auto b = pick(r, 1, 2), la = pick(r, 1, 3), lb = pick(r, 1, 3), d = pick(r, 1, 3);
    const auto start = r.below(la + lb), len = 1 + r.below(la + lb - start);
    return std::pair{Builder([start, len](auto& v) { return slice_seq(concat_seq(v[0], v[1]), start, len); }),
                     std::vector{random_tensor<double>({b, la, d}, r), random_tensor<double>({b, lb, d}, r)}};
  });
  check_op("slice_cols", 100, [](Rng& r) {
    const auto k = pick(r, 2, 8);
    const auto start = r.below(k), len = 1 + r.below(k - start);
    return std::pair{Builder([start, len](auto& v) { return slice_cols(v[0], start, len); }),
                     std::vector{random_tensor<double>({pick(r, 1, 3), k}, r)}};
  });
  check_op("modulate/gated_add", 100, [](Rng& r) {
    const auto b = pick(r, 1, 2), s = pick(r, 1, 3), d = pick(r, 1, 4);
    return std::pair{Builder([](auto& v) { return gated_add(v[0], v[3], modulate(v[0], v[1], v[2])); }),
                     std::vector{random_tensor<double>({b, s, d}, r), random_tensor<double>({b, d}, r),
                                 random_tensor<double>({b, d}, r), random_tensor<double>({b, d}, r)}};
  });
  check_op("embedding", 100, [](Rng& r) {
    const auto vocab = pick(r, 2, 5), d = pick(r, 1, 3), b = pick(r, 1, 2), l = pick(r, 1, 4);
    std::vector<std::int32_t> ids(b * l);
    for (auto& id : ids) id = static_cast<std::int32_t>(r.below(vocab + 1)) - 1;  // -1 pads
    return std::pair{Builder([ids, b](auto& v) { return embedding(v[0], std::span<const std::int32_t>(ids), b); }),
                     std::vector{random_tensor<double>({vocab, d}, r)}};
  });
  check_op("add_factorized_pos", 100, [](Rng& r) {
    const auto gf = pick(r, 1, 2), gr = pick(r, 1, 3), gc = pick(r, 1, 3), d = pick(r, 1, 3);
    return std::pair{Builder([gf, gr, gc](auto& v) { return add_factorized_pos(v[0], v[1], v[2], v[3], gf, gr, gc); }),
                     std::vector{random_tensor<double>({pick(r, 1, 2), gf * gr * gc, d}, r),
                                 random_tensor<double>({gf + 1, d}, r), random_tensor<double>({gr, d}, r),
                                 random_tensor<double>({gc + 1, d}, r)}};
  });
  check_op("gather_index", 100, [](Rng& r) {
    const auto n = pick(r, 1, 8);
    auto idx = std::make_shared<std::vector<std::size_t>>(n);
    std::iota(idx->begin(), idx->end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap((*idx)[i], (*idx)[r.below(i + 1)]);
    return std::pair{Builder([idx, n](auto& v) { return gather_index(v[0], Shape{n}, idx); }),
                     std::vector{random_tensor<double>({n}, r)}};
  });
}

TEST_CASE("op gradients: masked multi-head attention") {
  check_op("attention", 100, [](Rng& r) {
    const auto heads = pick(r, 1, 2), hd = pick(r, 1, 3), b = pick(r, 1, 2), s = pick(r, 1, 4);
    std::vector<std::uint8_t> valid(b * s);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < s; ++j) valid[i * s + j] = (j == 0 || r.bernoulli(0.7)) ? 1 : 0;
    }
    return std::pair{Builder([valid, heads](auto& v) {
                       return attention(v[0], heads, std::span<const std::uint8_t>(valid));
                     }),
                     std::vector{random_tensor<double>({b, s, 3 * heads * hd}, r)}};
  });
}

TEST_CASE("masked keys do not influence attention output") {
  Rng rng(4);
  auto qkv = random_tensor<double>({1, 4, 6}, rng);
  const std::vector<std::uint8_t> valid = {1, 1, 0, 1};
  const auto base = attention(VarD::constant(qkv), 2, valid).value();
  for (std::size_t c = 0; c < 6; ++c) qkv[2 * 6 + c] += 5.0;  // perturb masked token's q, k, v
  const auto moved = attention(VarD::constant(qkv), 2, valid).value();
  for (std::size_t row : {0u, 1u, 3u}) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(base[row * 2 + c] == moved[row * 2 + c]);
  }
}

// ---- AdamW ------------------------------------------------------------------

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  Rng rng(8);
  auto p = Var<double>::parameter(random_tensor<double>({3, 2}, rng));
  const auto before = p.value();
  AdamW<double> opt({{"p", p}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  p.node()->grad_buffer();  // explicit zero gradient
  opt.step();
  CHECK(bit_identical(p.value(), before));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: first step closed form") {
  auto w = Var<double>::parameter(Tensor<double>::full({1}, 1.0));
  AdamW<double> opt({{"w", w}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  w.node()->grad_buffer()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1: w = 1 - 0.1 * 1 / (1 + 1e-8)
  CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(w.value()[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw: decoupled decay") {
  auto w = Var<double>::parameter(Tensor<double>::full({2}, 3.0));
  AdamW<double> opt({{"w", w}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.1});
  w.node()->grad_buffer();
  opt.step();
  CHECK(w.value()[0] == doctest::Approx(3.0 * 0.99).epsilon(1e-15));
}

TEST_CASE("adamw: non-finite gradient aborts naming the parameter") {
  auto a = Var<float>::parameter(Tensor<float>::full({2}, 1.0f));
  auto b = Var<float>::parameter(Tensor<float>::full({2}, 1.0f));
  AdamW<float> opt({{"alpha", a}, {"beta.weight", b}}, AdamWConfig{});
  a.node()->grad_buffer()[0] = 1.0f;
  b.node()->grad_buffer()[1] = std::nanf("");
  try {
    opt.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("beta.weight") != std::string::npos);
  }
  CHECK(a.value()[0] == 1.0f);  // nothing applied
  CHECK(opt.step_count() == 0);
}

TEST_CASE("adamw: moment buffers match shapes and steps count up") {
  auto a = Var<float>::parameter(Tensor<float>({3, 4}));
  AdamW<float> opt({{"a", a}}, AdamWConfig{});
  CHECK(opt.slots()[0].m.shape() == a.shape());
  CHECK(opt.slots()[0].v.shape() == a.shape());
  for (int i = 1; i <= 3; ++i) {
    opt.step();
    CHECK(opt.step_count() == i);
  }
}

TEST_CASE("gradient clipping rescales to the max norm") {
  auto a = Var<double>::parameter(Tensor<double>({2}));
  AdamW<double> opt({{"a", a}}, AdamWConfig{});
  a.node()->grad_buffer()[0] = 3.0;
  a.node()->grad_buffer()[1] = 4.0;
  CHECK(opt.clip_grad_norm(1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(a.grad()[1] == doctest::Approx(0.8));
}

// ---- serialization ----------------------------------------------------------

TEST_CASE("tensor binary format round trip and layout") {
  Rng rng(9);
  const auto t = random_tensor<float>({2, 3}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "ICTXTNSR");
  CHECK(static_cast<int>(bytes[8]) == 1);
  CHECK(static_cast<int>(bytes[9]) == 2);
  CHECK(bytes.size() == 10 + 2 * 8 + 6 * 4);
  CHECK(static_cast<unsigned char>(bytes[10]) == 2);
  const auto back = read_tensor<float>(ss);
  CHECK(bit_identical(back, t));
}

TEST_CASE("tensor files reject corruption") {
  icv::testing::TempDir dir("tensor");
  Rng rng(10);
  const auto t = random_tensor<double>({4, 5}, rng);
  save_tensor(dir / "t.bin", t);
  CHECK(bit_identical(load_tensor<double>(dir / "t.bin"), t));
  CHECK(peek_tensor_dtype(dir / "t.bin") == DType::F64);

  std::string bytes = read_file(dir / "t.bin");
  write_file_atomic(dir / "short.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_tensor<double>(dir / "short.bin"), CorruptFileError);
  std::string bad = bytes;
  bad[0] = 'X';
  write_file_atomic(dir / "magic.bin", bad);
  CHECK_THROWS_AS(load_tensor<double>(dir / "magic.bin"), CorruptFileError);
  write_file_atomic(dir / "trail.bin", bytes + "!");
  CHECK_THROWS_AS(load_tensor<double>(dir / "trail.bin"), CorruptFileError);
}
