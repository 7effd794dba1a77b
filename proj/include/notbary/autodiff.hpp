// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-style reverse-mode differentiation over dense tensors. Every forward
// pass builds a fresh graph of shared nodes; dropping the root frees it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "notbary/errors.hpp"
#include "notbary/tensor.hpp"

namespace notbary::ad {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (!has_grad) {
      grad = value.zeros_like();
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

/// Handle to a node of the computation graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }

  /// Accumulated gradient; zeros when backward never reached this node.
  const Tensor& grad() const { return node_->grad_buffer(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const noexcept { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  void zero_grad() const {
    node_->grad = node_->value.zeros_like();
    node_->has_grad = true;
  }

  detail::Node* get() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var parameter(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

// Builds an interior node; parents and the backward rule are only retained
// when some parent carries gradient.
inline Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  notbary::detail::require(a.value().same_shape(b.value()),
                           std::string(op) + ": shape mismatch " + a.value().shape_string() +
                               " vs " + b.value().shape_string());
}

inline void check_matrix(const Var& a, const char* op) {
  notbary::detail::require(a.value().rank() == 2,
                           std::string(op) + ": expected a rank-2 tensor, got " +
                               a.value().shape_string());
}

// Elementwise map; `deriv(x, y)` returns dy/dx given input x and output y.
template <class F, class D>
Var unary(const Var& a, F f, D deriv) {
  Tensor out = a.value().zeros_like();
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return make(std::move(out), {a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto x = p.value.data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += gy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

/// Runs reverse accumulation from a scalar root into every reachable node
/// that requires gradient.
inline void backward(const Var& root) {
  notbary::detail::require(root.valid() && root.value().size() == 1,
                           "backward: root must be a scalar node");
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.get()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->has_grad) n->backward(*n);
  }
}

// ---- elementwise arithmetic ------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = a.value();
  out.mat().array() += b.value().mat().array();
  return detail::make(std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer().mat() += self.grad.mat();
  });
}

inline Var operator-(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.mat().array() -= b.value().mat().array();
  return detail::make(std::move(out), {a, b}, [](detail::Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer().mat() += self.grad.mat();
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer().mat() -= self.grad.mat();
  });
}

inline Var operator*(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  return detail::make(std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      pa.grad_buffer().mat().array() += self.grad.mat().array() * pb.value.mat().array();
    if (pb.requires_grad)
      pb.grad_buffer().mat().array() += self.grad.mat().array() * pa.value.mat().array();
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.mat() *= s;
  return detail::make(std::move(out), {a}, [s](detail::Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer().mat() += s * self.grad.mat();
  });
}

inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  out.mat().array() += s;
  return detail::make(std::move(out), {a}, [](detail::Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer().mat() += self.grad.mat();
  });
}

inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x < 0.0 ? 0.0 : x; },  // keeps NaN visible to divergence checks
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// ---- reductions --------------------------------------------------------------

inline Var sum(const Var& a) {
  return detail::make(Tensor::scalar(a.value().mat().sum()), {a}, [](detail::Node& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->grad_buffer().mat().array() += self.grad.item();
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return scale(sum(a), inv);
}

/// Sums each row: n x c -> n x 1.
inline Var row_sum(const Var& a) {
  detail::check_matrix(a, "row_sum");
  Tensor out = Tensor::matrix(a.rows(), 1);
  out.mat() = a.value().mat().rowwise().sum();
  return detail::make(std::move(out), {a}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.grad_buffer().mat().colwise() += self.grad.mat().col(0);
  });
}

// ---- linear algebra ----------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  notbary::detail::require(a.cols() == b.rows(),
                           "matmul: inner dimensions differ " + a.value().shape_string() + " x " +
                               b.value().shape_string());
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return detail::make(std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().mat().noalias() += self.grad.mat() * pb.value.mat().transpose();
    if (pb.requires_grad) pb.grad_buffer().mat().noalias() += pa.value.mat().transpose() * self.grad.mat();
  });
}

/// Adds a bias row vector (length c) to every row of an n x c matrix.
inline Var add_bias(const Var& x, const Var& bias) {
  detail::check_matrix(x, "add_bias");
  notbary::detail::require(bias.value().rows() == 1 && bias.value().cols() == x.cols(),
                           "add_bias: bias length mismatch");
  Tensor out = x.value();
  out.mat().rowwise() += bias.value().mat().row(0);
  return detail::make(std::move(out), {x, bias}, [](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) px.grad_buffer().mat() += self.grad.mat();
    if (pb.requires_grad) {
      pb.grad_buffer().mat().row(0) += self.grad.mat().colwise().sum();
    }
  });
}

// ---- row manipulation -------------------------------------------------------

/// Repeats each row m times consecutively: n x c -> (n*m) x c.
inline Var repeat_rows(const Var& a, std::size_t m) {
  detail::check_matrix(a, "repeat_rows");
  notbary::detail::require(m >= 1, "repeat_rows: repeat count must be positive");
  if (m == 1) return a;
  const std::size_t n = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(n * m, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(a.value().raw() + i * c, c, out.raw() + (i * m + j) * c);
  return detail::make(std::move(out), {a}, [n, m, c](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < c; ++k) g[i * c + k] += self.grad[(i * m + j) * c + k];
  });
}

/// Averages consecutive groups of m rows: (n*m) x c -> n x c.
inline Var group_mean(const Var& a, std::size_t m) {
  detail::check_matrix(a, "group_mean");
  notbary::detail::require(m >= 1 && a.rows() % m == 0, "group_mean: rows not divisible by group");
  if (m == 1) return a;
  const std::size_t n = a.rows() / m, c = a.cols();
  const double inv = 1.0 / static_cast<double>(m);
  Tensor out = Tensor::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += a.value()[(i * m + j) * c + k];
  out.mat() *= inv;
  return detail::make(std::move(out), {a}, [n, m, c, inv](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < c; ++k) g[(i * m + j) * c + k] += inv * self.grad[i * c + k];
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  detail::check_matrix(a, "concat_cols");
  detail::check_matrix(b, "concat_cols");
  notbary::detail::require(a.rows() == b.rows(), "concat_cols: row counts differ");
  const auto ca = static_cast<Eigen::Index>(a.cols()), cb = static_cast<Eigen::Index>(b.cols());
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  out.mat().leftCols(ca) = a.value().mat();
  out.mat().rightCols(cb) = b.value().mat();
  return detail::make(std::move(out), {a, b}, [ca, cb](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().mat() += self.grad.mat().leftCols(ca);
    if (pb.requires_grad) pb.grad_buffer().mat() += self.grad.mat().rightCols(cb);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  notbary::detail::require(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_matrix(p, "concat_rows");
    notbary::detail::require(p.cols() == c, "concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor out = Tensor::matrix(total, c);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy_n(p.value().raw(), p.value().size(), out.raw() + off * c);
    off += p.rows();
  }
  return detail::make(std::move(out), parts, [offsets, c](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const double* src = self.grad.raw() + offsets[k] * c;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  });
}

inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  detail::check_matrix(a, "slice_rows");
  notbary::detail::require(count >= 1 && begin + count <= a.rows(), "slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  Tensor out = Tensor::matrix(count, c);
  std::copy_n(a.value().raw() + begin * c, count * c, out.raw());
  return detail::make(std::move(out), {a}, [begin, c](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    double* dst = p.grad_buffer().raw() + begin * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

/// Central finite-difference gradient of a scalar function.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h) {
  notbary::detail::require(h > 0.0, "finite_diff_grad: step must be positive");
  Tensor g = x.zeros_like();
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace notbary::ad
