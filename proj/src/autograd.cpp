// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace icv {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
ArrMap<T> arr(Tensor<T>& t) {
  return ArrMap<T>(t.ptr(), static_cast<Eigen::Index>(t.numel()));
}
template <typename T>
ConstArrMap<T> arr(const Tensor<T>& t) {
  return ConstArrMap<T>(t.ptr(), static_cast<Eigen::Index>(t.numel()));
}

template <typename T>
Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, const char* op,
              std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(fn);
    }
  }
  return Var<T>(node);
}

template <typename T>
bool wants_grad(const Node<T>& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

template <typename T>
Tensor<T>& parent_grad(Node<T>& self, std::size_t i) {
  return self.parents[i]->grad_buffer();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                       shape_str(b));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.shape() != value.shape()) shape_mismatch("accumulate", g.shape(), value.shape());
  if (grad.empty()) {
    grad = g;
    return;
  }
  arr(grad) += arr(g);
}

template <typename T>
std::vector<Node<T>*> topological_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; graphs from deep models overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root) throw ContractError("backward on an empty Var");
  if (root.numel() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  auto order = topological_order(root);
  root.node()->accumulate(Tensor<T>::full(root.shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward) continue;
    if (!node->grad.empty()) node->backward(*node);
    // Interior gradients are consumed exactly once.
    node->grad = Tensor<T>();
  }
}

// ---- linear algebra ------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  MatMap<T>(out.ptr(), m, n).noalias() =
      ConstMatMap<T>(a.value().ptr(), m, k) * ConstMatMap<T>(b.value().ptr(), k, n);
  return record<T>(std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& self) {
    ConstMatMap<T> g(self.grad.ptr(), m, n);
    ConstMatMap<T> av(self.parents[0]->value.ptr(), m, k);
    ConstMatMap<T> bv(self.parents[1]->value.ptr(), k, n);
    if (wants_grad(self, 0)) {
      MatMap<T>(parent_grad(self, 0).ptr(), m, k).noalias() += g * bv.transpose();
    }
    if (wants_grad(self, 1)) {
      MatMap<T>(parent_grad(self, 1).ptr(), k, n).noalias() += av.transpose() * g;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (weight.shape().size() != 2 || x.shape().empty() || x.shape().back() != weight.dim(1)) {
    shape_mismatch("linear", x.shape(), weight.shape());
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && (bias.shape().size() != 1 || bias.dim(0) != weight.dim(0))) {
    shape_mismatch("linear(bias)", bias.shape(), weight.shape());
  }
  const auto in = static_cast<Eigen::Index>(weight.dim(1));
  const auto outd = static_cast<Eigen::Index>(weight.dim(0));
  const auto rows = static_cast<Eigen::Index>(x.numel() / weight.dim(1));
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(0);
  Tensor<T> out(out_shape);
  MatMap<T> y(out.ptr(), rows, outd);
  y.noalias() = ConstMatMap<T>(x.value().ptr(), rows, in) *
                ConstMatMap<T>(weight.value().ptr(), outd, in).transpose();
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().ptr(), outd);
  }
  auto fn = [rows, in, outd, has_bias](Node<T>& self) {
    ConstMatMap<T> g(self.grad.ptr(), rows, outd);
    if (wants_grad(self, 0)) {
      MatMap<T>(parent_grad(self, 0).ptr(), rows, in).noalias() +=
          g * ConstMatMap<T>(self.parents[1]->value.ptr(), outd, in);
    }
    if (wants_grad(self, 1)) {
      MatMap<T>(parent_grad(self, 1).ptr(), outd, in).noalias() +=
          g.transpose() * ConstMatMap<T>(self.parents[0]->value.ptr(), rows, in);
    }
    if (has_bias && wants_grad(self, 2)) {
      T* gb = parent_grad(self, 2).ptr();
      for (Eigen::Index r = 0; r < rows; ++r) {
        const T* row = self.grad.ptr() + r * outd;
        for (Eigen::Index c = 0; c < outd; ++c) gb[c] += row[c];
      }
    }
  };
  if (has_bias) return record<T>(std::move(out), {x, weight, bias}, "linear", std::move(fn));
  return record<T>(std::move(out), {x, weight}, "linear", std::move(fn));
}

// ---- elementwise ---------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  arr(out) = arr(a.value()) + arr(b.value());
  return record<T>(std::move(out), {a, b}, "add", [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (wants_grad(self, i)) self.parents[i]->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  arr(out) = arr(a.value()) - arr(b.value());
  return record<T>(std::move(out), {a, b}, "sub", [](Node<T>& self) {
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants_grad(self, 1)) arr(parent_grad(self, 1)) -= arr(self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  arr(out) = arr(a.value()) * arr(b.value());
  return record<T>(std::move(out), {a, b}, "mul", [](Node<T>& self) {
    if (wants_grad(self, 0)) arr(parent_grad(self, 0)) += arr(self.grad) * arr(self.parents[1]->value);
    if (wants_grad(self, 1)) arr(parent_grad(self, 1)) += arr(self.grad) * arr(self.parents[0]->value);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  arr(out) = arr(a.value()) * factor;
  return record<T>(std::move(out), {a}, "scale", [factor](Node<T>& self) {
    arr(parent_grad(self, 0)) += arr(self.grad) * factor;
  });
}

template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c) {
  const auto& as = a.shape();
  const auto& cs = c.shape();
  if (cs.size() > as.size() || !std::equal(cs.rbegin(), cs.rend(), as.rbegin())) {
    shape_mismatch("add_const", as, cs);
  }
  Tensor<T> out = a.value();
  const std::size_t block = c.numel();
  for (std::size_t off = 0; off < out.numel(); off += block) {
    for (std::size_t i = 0; i < block; ++i) out[off + i] += c[i];
  }
  return record<T>(std::move(out), {a}, "add_const",
                   [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (auto v : a.value().data()) total += v;
  return record<T>(Tensor<T>::scalar(total), {a}, "sum", [](Node<T>& self) {
    arr(parent_grad(self, 0)) += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.numel());
  T total{0};
  for (auto v : a.value().data()) total += v;
  return record<T>(Tensor<T>::scalar(total / n), {a}, "mean", [n](Node<T>& self) {
    arr(parent_grad(self, 0)) += self.grad[0] / n;
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    shape_mismatch("mse_loss", prediction.shape(), target.shape());
  }
  const auto& p = prediction.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(p.numel());
  return record<T>(Tensor<T>::scalar(static_cast<T>(acc / n)), {prediction}, "mse_loss",
                   [target, n](Node<T>& self) {
                     const T coef = static_cast<T>(2.0 / n) * self.grad[0];
                     arr(parent_grad(self, 0)) +=
                         (arr(self.parents[0]->value) - arr(target)) * coef;
                   });
}

// ---- normalization and activations ---------------------------------------

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> out(s);
  const T* in = x.value().ptr();
  T* o = out.ptr();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * n * inner + b;
      T m = in[base];
      for (std::size_t i = 1; i < n; ++i) m = std::max(m, in[base + i * inner]);
      T z{0};
      for (std::size_t i = 0; i < n; ++i) {
        o[base + i * inner] = std::exp(in[base + i * inner] - m);
        z += o[base + i * inner];
      }
      for (std::size_t i = 0; i < n; ++i) o[base + i * inner] /= z;
    }
  }
  return record<T>(std::move(out), {x}, "softmax", [outer, inner, n](Node<T>& self) {
    const T* y = self.value.ptr();
    const T* g = self.grad.ptr();
    T* gx = parent_grad(self, 0).ptr();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * n * inner + b;
        T dot{0};
        for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          gx[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  if (x.shape().empty()) throw DimensionError("layer_norm on a scalar");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const bool has_gain = static_cast<bool>(gain);
  const bool has_bias = static_cast<bool>(bias);
  if (has_gain && gain.shape() != Shape{n}) shape_mismatch("layer_norm(gain)", gain.shape(), {n});
  if (has_bias && bias.shape() != Shape{n}) shape_mismatch("layer_norm(bias)", bias.shape(), {n});

  auto xhat = std::make_shared<AlignedVector<T>>(x.numel());
  auto rstd = std::make_shared<AlignedVector<T>>(rows);
  Tensor<T> out(x.shape());
  const T* in = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += row[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = row[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = static_cast<T>(row[i] - mu) * rs;
      (*xhat)[r * n + i] = h;
      T y = h;
      if (has_gain) y *= gain.value()[i];
      if (has_bias) y += bias.value()[i];
      out[r * n + i] = y;
    }
  }
  auto fn = [xhat, rstd, n, rows, has_gain, has_bias](Node<T>& self) {
    const T* g = self.grad.ptr();
    const T* gv = has_gain ? self.parents[1]->value.ptr() : nullptr;
    const std::size_t bias_idx = has_gain ? 2 : 1;
    if (has_gain && wants_grad(self, 1)) {
      T* gg = parent_grad(self, 1).ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < n; ++i) gg[i] += g[r * n + i] * (*xhat)[r * n + i];
      }
    }
    if (has_bias && wants_grad(self, bias_idx)) {
      T* gb = parent_grad(self, bias_idx).ptr();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i];
      }
    }
    if (wants_grad(self, 0)) {
      T* gx = parent_grad(self, 0).ptr();
      AlignedVector<T> dh(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T m1{0}, m2{0};
        for (std::size_t i = 0; i < n; ++i) {
          dh[i] = g[r * n + i] * (gv ? gv[i] : T{1});
          m1 += dh[i];
          m2 += dh[i] * (*xhat)[r * n + i];
        }
        m1 /= static_cast<T>(n);
        m2 /= static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          gx[r * n + i] += (*rstd)[r] * (dh[i] - m1 - (*xhat)[r * n + i] * m2);
        }
      }
    }
  };
  if (has_gain && has_bias) return record<T>(std::move(out), {x, gain, bias}, "layer_norm", fn);
  if (has_gain) return record<T>(std::move(out), {x, gain}, "layer_norm", fn);
  if (has_bias) return record<T>(std::move(out), {x, bias}, "layer_norm", fn);
  return record<T>(std::move(out), {x}, "layer_norm", fn);
}

template <typename T>
Var<T> gelu_tanh(const Var<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  auto th = std::make_shared<Tensor<T>>(x.shape());
  const auto xv = arr(x.value());
  arr(*th) = (c * (xv + k * xv.cube())).tanh();
  Tensor<T> out(x.shape());
  arr(out) = T(0.5) * xv * (T(1) + arr(*th));
  return record<T>(std::move(out), {x}, "gelu_tanh", [th, c, k](Node<T>& self) {
    const auto xv = arr(self.parents[0]->value);
    const auto t = arr(*th);
    arr(parent_grad(self, 0)) +=
        arr(self.grad) * (T(0.5) * (T(1) + t) +
                          T(0.5) * xv * (T(1) - t.square()) * c * (T(1) + T(3) * k * xv.square()));
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  auto sig = std::make_shared<Tensor<T>>(x.shape());
  const auto xv = arr(x.value());
  arr(*sig) = T(1) / (T(1) + (-xv).exp());
  Tensor<T> out(x.shape());
  arr(out) = xv * arr(*sig);
  return record<T>(std::move(out), {x}, "silu", [sig](Node<T>& self) {
    const auto xv = arr(self.parents[0]->value);
    const auto s = arr(*sig);
    arr(parent_grad(self, 0)) += arr(self.grad) * (s * (T(1) + xv * (T(1) - s)));
  });
}

// ---- shape manipulation --------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshape(std::move(shape));
  return record<T>(std::move(out), {x}, "reshape", [](Node<T>& self) {
    arr(parent_grad(self, 0)) += arr(self.grad);
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  Tensor<T> out = x.value().permute(perm);
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  return record<T>(std::move(out), {x}, "permute", [inverse](Node<T>& self) {
    self.parents[0]->accumulate(self.grad.permute(inverse));
  });
}

template <typename T>
Var<T> concat_seq(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(2)) {
    shape_mismatch("concat_seq", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), la = a.dim(1), lb = b.dim(1), d = a.dim(2);
  Tensor<T> out({batch, la + lb, d});
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(a.value().ptr() + i * la * d, la * d, out.ptr() + i * (la + lb) * d);
    std::copy_n(b.value().ptr() + i * lb * d, lb * d, out.ptr() + i * (la + lb) * d + la * d);
  }
  return record<T>(std::move(out), {a, b}, "concat_seq", [batch, la, lb, d](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      T* g = parent_grad(self, p).ptr();
      const std::size_t len = p == 0 ? la : lb;
      const std::size_t off = p == 0 ? 0 : la;
      for (std::size_t i = 0; i < batch; ++i) {
        const T* src = self.grad.ptr() + (i * (la + lb) + off) * d;
        for (std::size_t j = 0; j < len * d; ++j) g[i * len * d + j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> slice_seq(const Var<T>& x, std::size_t start, std::size_t len) {
  if (x.shape().size() != 3 || start + len > x.dim(1) || len == 0) {
    throw DimensionError("slice_seq [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor<T> out({batch, len, d});
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(x.value().ptr() + (i * s + start) * d, len * d, out.ptr() + i * len * d);
  }
  return record<T>(std::move(out), {x}, "slice_seq", [batch, s, d, start, len](Node<T>& self) {
    T* g = parent_grad(self, 0).ptr();
    for (std::size_t i = 0; i < batch; ++i) {
      const T* src = self.grad.ptr() + i * len * d;
      T* dst = g + (i * s + start) * d;
      for (std::size_t j = 0; j < len * d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t start, std::size_t len) {
  if (x.shape().size() != 2 || start + len > x.dim(1) || len == 0) {
    throw DimensionError("slice_cols out of range for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), k = x.dim(1);
  Tensor<T> out({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.value().ptr() + r * k + start, len, out.ptr() + r * len);
  }
  return record<T>(std::move(out), {x}, "slice_cols", [rows, k, start, len](Node<T>& self) {
    T* g = parent_grad(self, 0).ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < len; ++j) g[r * k + start + j] += self.grad[r * len + j];
    }
  });
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scl) {
  if (x.shape().size() != 3 || shift.shape() != Shape{x.dim(0), x.dim(2)} ||
      scl.shape() != shift.shape()) {
    shape_mismatch("modulate", x.shape(), shift.shape());
  }
  const std::size_t batch = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* sh = shift.value().ptr() + b * d;
    const T* sc = scl.value().ptr() + b * d;
    for (std::size_t i = 0; i < s; ++i) {
      const T* xi = x.value().ptr() + (b * s + i) * d;
      T* oi = out.ptr() + (b * s + i) * d;
      for (std::size_t j = 0; j < d; ++j) oi[j] = xi[j] * (T(1) + sc[j]) + sh[j];
    }
  }
  return record<T>(std::move(out), {x, shift, scl}, "modulate", [batch, s, d](Node<T>& self) {
    const T* g = self.grad.ptr();
    const T* xv = self.parents[0]->value.ptr();
    const T* sc = self.parents[2]->value.ptr();
    T* gx = wants_grad(self, 0) ? parent_grad(self, 0).ptr() : nullptr;
    T* gsh = wants_grad(self, 1) ? parent_grad(self, 1).ptr() : nullptr;
    T* gsc = wants_grad(self, 2) ? parent_grad(self, 2).ptr() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t off = (b * s + i) * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (gx) gx[off + j] += g[off + j] * (T(1) + sc[b * d + j]);
          if (gsh) gsh[b * d + j] += g[off + j];
          if (gsc) gsc[b * d + j] += g[off + j] * xv[off + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> gated_add(const Var<T>& x, const Var<T>& gate, const Var<T>& y) {
  if (x.shape().size() != 3 || x.shape() != y.shape() ||
      gate.shape() != Shape{x.dim(0), x.dim(2)}) {
    shape_mismatch("gated_add", x.shape(), gate.shape());
  }
  const std::size_t batch = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const T* gt = gate.value().ptr() + b * d;
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t off = (b * s + i) * d;
      for (std::size_t j = 0; j < d; ++j) {
        out[off + j] = x.value()[off + j] + gt[j] * y.value()[off + j];
      }
    }
  }
  return record<T>(std::move(out), {x, gate, y}, "gated_add", [batch, s, d](Node<T>& self) {
    const T* g = self.grad.ptr();
    if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
    const T* gt = self.parents[1]->value.ptr();
    const T* yv = self.parents[2]->value.ptr();
    T* gg = wants_grad(self, 1) ? parent_grad(self, 1).ptr() : nullptr;
    T* gy = wants_grad(self, 2) ? parent_grad(self, 2).ptr() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t off = (b * s + i) * d;
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[b * d + j] += g[off + j] * yv[off + j];
          if (gy) gy[off + j] += g[off + j] * gt[b * d + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids, std::size_t batch) {
  if (table.shape().size() != 2 || batch == 0 || ids.size() % batch != 0) {
    throw DimensionError("embedding: bad table " + shape_str(table.shape()) + " or id count " +
                         std::to_string(ids.size()));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1), len = ids.size() / batch;
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  Tensor<T> out({batch, len, d});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0) continue;
    if (static_cast<std::size_t>(idv[i]) >= vocab) {
      throw BoundsError("token id " + std::to_string(idv[i]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(idv[i]) * d, d, out.ptr() + i * d);
  }
  return record<T>(std::move(out), {table}, "embedding", [idv, d](Node<T>& self) {
    T* g = parent_grad(self, 0).ptr();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      if (idv[i] < 0) continue;
      T* row = g + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
    }
  });
}

template <typename T>
Var<T> add_factorized_pos(const Var<T>& h, const Var<T>& frame, const Var<T>& row,
                          const Var<T>& col, std::size_t gf, std::size_t gr, std::size_t gc) {
  if (h.shape().size() != 3 || h.dim(1) != gf * gr * gc) {
    throw DimensionError("add_factorized_pos: " + shape_str(h.shape()) + " is not a " +
                         std::to_string(gf) + "x" + std::to_string(gr) + "x" +
                         std::to_string(gc) + " token grid");
  }
  const std::size_t d = h.dim(2), batch = h.dim(0), n = h.dim(1);
  if (frame.dim(1) != d || row.dim(1) != d || col.dim(1) != d || frame.dim(0) < gf ||
      row.dim(0) < gr || col.dim(0) < gc) {
    throw DimensionError("add_factorized_pos: position tables too small for token grid");
  }
  Tensor<T> out = h.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0, tok = 0; f < gf; ++f) {
      for (std::size_t r = 0; r < gr; ++r) {
        for (std::size_t c = 0; c < gc; ++c, ++tok) {
          T* o = out.ptr() + (b * n + tok) * d;
          const T* pf = frame.value().ptr() + f * d;
          const T* pr = row.value().ptr() + r * d;
          const T* pc = col.value().ptr() + c * d;
          for (std::size_t j = 0; j < d; ++j) o[j] += pf[j] + pr[j] + pc[j];
        }
      }
    }
  }
  return record<T>(std::move(out), {h, frame, row, col}, "add_factorized_pos",
                   [batch, n, d, gf, gr, gc](Node<T>& self) {
                     if (wants_grad(self, 0)) self.parents[0]->accumulate(self.grad);
                     T* gfp = wants_grad(self, 1) ? parent_grad(self, 1).ptr() : nullptr;
                     T* grp = wants_grad(self, 2) ? parent_grad(self, 2).ptr() : nullptr;
                     T* gcp = wants_grad(self, 3) ? parent_grad(self, 3).ptr() : nullptr;
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t f = 0, tok = 0; f < gf; ++f) {
                         for (std::size_t r = 0; r < gr; ++r) {
                           for (std::size_t c = 0; c < gc; ++c, ++tok) {
                             const T* g = self.grad.ptr() + (b * n + tok) * d;
                             for (std::size_t j = 0; j < d; ++j) {
                               if (gfp) gfp[f * d + j] += g[j];
                               if (grp) grp[r * d + j] += g[j];
                               if (gcp) gcp[c * d + j] += g[j];
                             }
                           }
                         }
                       }
                     }
                   });
}

template <typename T>
Var<T> attention(const Var<T>& qkv, std::size_t heads, std::span<const std::uint8_t> key_valid) {
  if (qkv.shape().size() != 3 || heads == 0 || qkv.dim(2) % (3 * heads) != 0) {
    throw DimensionError("attention: qkv " + shape_str(qkv.shape()) + " incompatible with " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t batch = qkv.dim(0), s = qkv.dim(1), d = qkv.dim(2) / 3, dh = d / heads;
  if (!key_valid.empty() && key_valid.size() != batch * s) {
    throw DimensionError("attention: key mask length " + std::to_string(key_valid.size()) +
                         " != " + std::to_string(batch * s));
  }
  const auto S = static_cast<Eigen::Index>(s);
  const auto Dh = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  auto probs = std::make_shared<AlignedVector<T>>(batch * heads * s * s);
  Tensor<T> out({batch, s, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = qkv.value().ptr() + b * s * 3 * d;
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap<T> q(base + h * dh, S, Dh, in_stride);
      ConstStridedMap<T> k(base + d + h * dh, S, Dh, in_stride);
      ConstStridedMap<T> v(base + 2 * d + h * dh, S, Dh, in_stride);
      MatMap<T> p(probs->data() + (b * heads + h) * s * s, S, S);
      p.noalias() = (q * k.transpose()) * inv_sqrt;
      if (!key_valid.empty()) {
        for (std::size_t j = 0; j < s; ++j) {
          if (!key_valid[b * s + j]) p.col(static_cast<Eigen::Index>(j)).setConstant(neg_inf);
        }
      }
      for (Eigen::Index r = 0; r < S; ++r) {
        auto row = p.row(r).array();
        const T m = row.maxCoeff();
        row = (row - m).exp();
        row /= row.sum();
      }
      if (!key_valid.empty()) {
        for (std::size_t j = 0; j < s; ++j) {
          if (!key_valid[b * s + j]) p.col(static_cast<Eigen::Index>(j)).setZero();
        }
      }
      StridedMap<T> o(out.ptr() + b * s * d + h * dh, S, Dh, out_stride);
      o.noalias() = p * v;
    }
  }
  return record<T>(
      std::move(out), {qkv}, "attention",
      [probs, batch, heads, s, d, dh, inv_sqrt](Node<T>& self) {
        const auto S = static_cast<Eigen::Index>(s);
        const auto Dh = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
        T* gqkv = parent_grad(self, 0).ptr();
        RowMat<T> dp(S, S);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = self.parents[0]->value.ptr() + b * s * 3 * d;
          T* gbase = gqkv + b * s * 3 * d;
          for (std::size_t h = 0; h < heads; ++h) {
            ConstStridedMap<T> q(base + h * dh, S, Dh, in_stride);
            ConstStridedMap<T> k(base + d + h * dh, S, Dh, in_stride);
            ConstStridedMap<T> v(base + 2 * d + h * dh, S, Dh, in_stride);
            ConstMatMap<T> p(probs->data() + (b * heads + h) * s * s, S, S);
            ConstStridedMap<T> go(self.grad.ptr() + b * s * d + h * dh, S, Dh, out_stride);
            StridedMap<T> gq(gbase + h * dh, S, Dh, in_stride);
            StridedMap<T> gk(gbase + d + h * dh, S, Dh, in_stride);
            StridedMap<T> gv(gbase + 2 * d + h * dh, S, Dh, in_stride);
            gv.noalias() += p.transpose() * go;
            dp.noalias() = go * v.transpose();
            for (Eigen::Index r = 0; r < S; ++r) {
              const T dot = (dp.row(r).array() * p.row(r).array()).sum();
              dp.row(r).array() = p.row(r).array() * (dp.row(r).array() - dot);
            }
            gq.noalias() += (dp * k) * inv_sqrt;
            gk.noalias() += (dp.transpose() * q) * inv_sqrt;
          }
        }
      });
}

template <typename T>
Var<T> gather_index(const Var<T>& x, Shape out_shape,
                    std::shared_ptr<const std::vector<std::size_t>> index) {
  if (shape_numel(out_shape) != index->size()) {
    throw DimensionError("gather_index: index size does not match " + shape_str(out_shape));
  }
  Tensor<T> out(std::move(out_shape));
  const T* in = x.value().ptr();
  for (std::size_t i = 0; i < index->size(); ++i) out[i] = in[(*index)[i]];
  return record<T>(std::move(out), {x}, "gather_index", [index](Node<T>& self) {
    T* g = parent_grad(self, 0).ptr();
    for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
  });
}

#define ICV_INSTANTIATE_AUTOGRAD(T)                                                          \
  template struct Node<T>;                                                                  \
  template std::vector<Node<T>*> topological_order(const Var<T>&);                          \
  template void backward(const Var<T>&);                                                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale(const Var<T>&, T);                                                  \
  template Var<T> add_const(const Var<T>&, const Tensor<T>&);                               \
  template Var<T> sum(const Var<T>&);                                                       \
  template Var<T> mean(const Var<T>&);                                                      \
  template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);                                \
  template Var<T> softmax(const Var<T>&, std::size_t);                                      \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);               \
  template Var<T> gelu_tanh(const Var<T>&);                                                 \
  template Var<T> silu(const Var<T>&);                                                      \
  template Var<T> reshape(const Var<T>&, Shape);                                            \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                  \
  template Var<T> concat_seq(const Var<T>&, const Var<T>&);                                 \
  template Var<T> slice_seq(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> modulate(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> gated_add(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> embedding(const Var<T>&, std::span<const std::int32_t>, std::size_t);     \
  template Var<T> add_factorized_pos(const Var<T>&, const Var<T>&, const Var<T>&,           \
                                     const Var<T>&, std::size_t, std::size_t, std::size_t); \
  template Var<T> attention(const Var<T>&, std::size_t, std::span<const std::uint8_t>);     \
  template Var<T> gather_index(const Var<T>&, Shape,                                        \
                               std::shared_ptr<const std::vector<std::size_t>>);

ICV_INSTANTIATE_AUTOGRAD(float)
ICV_INSTANTIATE_AUTOGRAD(double)

}  // namespace icv
