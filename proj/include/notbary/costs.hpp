// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Ground costs and Monte-Carlo estimators of the weak costs
//   classical:  E_{y~mu} c(x, y)
//   eps-KL:     E_{y~mu} c(x, y) + eps * KL(mu || mu0)
//   gamma-energy: E_{y~mu} c(x, y) + gamma * E^2_l(mu, mu0)
// The energy estimator drops the constant -E l(y0, y0'), so its values are
// only comparable within one problem.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "notbary/autodiff.hpp"
#include "notbary/distributions.hpp"
#include "notbary/errors.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

/// c(x, y) = 1/2 |x - y|^2
struct SqEuclidean {};

/// c(x, y) = 1/2 |twist(x) - twist(y)|^2
struct Twisted {
  double kappa = 1.0;
};

using GroundCost = std::variant<SqEuclidean, Twisted>;

/// l(a, b) = |a - b|^alpha, alpha in [1, 2].
struct Semimetric {
  double alpha = 1.0;

  double operator()(std::span<const double> a, std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return alpha == 1.0 ? std::sqrt(s) : std::pow(s, 0.5 * alpha);
  }

  // Gradient of l w.r.t. a, accumulated as scale * grad into out.
  void accumulate_grad(std::span<const double> a, std::span<const double> b, double scale,
                       std::span<double> out) const {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    if (s == 0.0) return;
    const double f = alpha * std::pow(s, 0.5 * alpha - 1.0) * scale;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] += f * (a[i] - b[i]);
  }
};

struct ClassicalCost {
  GroundCost ground;
};

/// Prior must have diagonal covariance.
struct KlCost {
  GroundCost ground;
  double epsilon = 1.0;
  GaussianDist prior;
};

struct EnergyCost {
  GroundCost ground;
  double gamma = 1.0;
  Semimetric ell;
  Distribution prior;
};

using WeakCostSpec = std::variant<ClassicalCost, KlCost, EnergyCost>;

inline const GroundCost& ground_of(const WeakCostSpec& spec) {
  return std::visit([](const auto& c) -> const GroundCost& { return c.ground; }, spec);
}

inline bool is_diagonal(const Eigen::MatrixXd& m) {
  return (m - Eigen::MatrixXd(m.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
}

inline void validate(const WeakCostSpec& spec) {
  std::visit(
      [](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, KlCost>) {
          detail::require(c.epsilon > 0.0, "KL cost: epsilon must be positive");
          c.prior.validate();
          detail::require(is_diagonal(c.prior.cov), "KL cost: prior covariance must be diagonal");
        } else if constexpr (std::is_same_v<T, EnergyCost>) {
          detail::require(c.gamma > 0.0, "energy cost: gamma must be positive");
          detail::require(c.ell.alpha >= 1.0 && c.ell.alpha <= 2.0, "energy cost: alpha must lie in [1, 2]");
        }
      },
      spec);
}

// ---- ground costs ----------------------------------------------------------

inline double ground_cost(const GroundCost& c, std::span<const double> x, std::span<const double> y) {
  detail::require(x.size() == y.size(), "ground_cost: dimension mismatch");
  if (const auto* tw = std::get_if<Twisted>(&c)) {
    detail::require(x.size() == 2, "ground_cost: twisted cost is planar");
    const auto ux = twist({x[0], x[1]}, tw->kappa);
    const auto uy = twist({y[0], y[1]}, tw->kappa);
    return 0.5 * ((ux[0] - uy[0]) * (ux[0] - uy[0]) + (ux[1] - uy[1]) * (ux[1] - uy[1]));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return 0.5 * s;
}

namespace ad {

/// Row-wise twist of an n x 2 matrix.
inline Var twist_rows(const Var& y, double kappa) {
  notbary::detail::require(y.value().rank() == 2 && y.cols() == 2, "twist_rows: expected n x 2 input");
  Tensor out = y.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto u = twist({out(i, 0), out(i, 1)}, kappa);
    out(i, 0) = u[0];
    out(i, 1) = u[1];
  }
  return detail::make(std::move(out), {y}, [kappa](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.rows(); ++i) {
      const double y0 = p.value(i, 0), y1 = p.value(i, 1);
      const double u0 = self.value(i, 0), u1 = self.value(i, 1);
      const double g0 = self.grad(i, 0), g1 = self.grad(i, 1);
      const double r = std::hypot(y0, y1);
      const double a = kappa * r, c = std::cos(a), s = std::sin(a);
      // J = R + (-u1, u0)^T kappa y^T / |y|
      double d0 = c * g0 + s * g1;
      double d1 = -s * g0 + c * g1;
      if (r > 0.0) {
        const double w = kappa * (-u1 * g0 + u0 * g1) / r;
        d0 += w * y0;
        d1 += w * y1;
      }
      g(i, 0) += d0;
      g(i, 1) += d1;
    }
  });
}

/// Row-wise ground cost c(x_i, y_i) as an n x 1 column.
inline Var ground_cost_rows(const GroundCost& c, const Var& x, const Var& y) {
  detail::check_same_shape(x, y, "ground_cost_rows");
  if (const auto* tw = std::get_if<Twisted>(&c))
    return 0.5 * row_sum(square(twist_rows(x, tw->kappa) - twist_rows(y, tw->kappa)));
  return 0.5 * row_sum(square(x - y));
}

/// Per-input classical estimate: x is n x D, y is (n*m) x D holding m mapped
/// samples per input in consecutive rows. Returns n x 1.
inline Var classical_rows(const GroundCost& c, const Var& x, const Var& y) {
  notbary::detail::require(x.rows() >= 1 && y.rows() % x.rows() == 0, "classical_rows: batch shape mismatch");
  const std::size_t m = y.rows() / x.rows();
  return group_mean(ground_cost_rows(c, repeat_rows(x, m), y), m);
}

/// KL(N(mu, diag sigma^2) || N(m0, diag d)) per row; mu, sigma are n x D.
inline Var kl_gaussian_rows(const Var& mu, const Var& sigma, const GaussianDist& prior) {
  detail::check_same_shape(mu, sigma, "kl_gaussian_rows");
  notbary::detail::require(mu.cols() == prior.dim(), "kl_gaussian_rows: prior dimension mismatch");
  notbary::detail::require(is_diagonal(prior.cov), "kl_gaussian_rows: prior covariance must be diagonal");
  for (double s : sigma.value().data())
    notbary::detail::require(s > 0.0, "kl_gaussian_rows: sigma must be positive");
  const std::size_t n = mu.rows(), d = mu.cols();
  Tensor m0 = Tensor::matrix(n, d), inv2d = Tensor::matrix(n, d);
  double log_sqrt_d = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double dj = prior.cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
    log_sqrt_d += 0.5 * std::log(dj);
    for (std::size_t i = 0; i < n; ++i) {
      m0(i, j) = prior.mean[static_cast<Eigen::Index>(j)];
      inv2d(i, j) = 0.5 / dj;
    }
  }
  const Var w = constant(std::move(inv2d));
  const Var quad = row_sum((square(sigma) + square(mu - constant(std::move(m0)))) * w);
  const Var logs = row_sum(log(sigma));
  return add_scalar(quad - logs, log_sqrt_d - 0.5 * static_cast<double>(d));
}

/// Fused per-group energy term. y is (n*m) x D (m >= 2 mapped samples per
/// input), y0 is (n*p) x D prior samples. Row i of the n x 1 result is
///   2/(m p) sum_{s,t} l(y_s, y0_t) - 1/(m (m-1)) sum_{s != s'} l(y_s, y_s').
inline Var energy_rows(const Var& y, const Var& y0, std::size_t n, const Semimetric& ell) {
  notbary::detail::require(n >= 1 && y.rows() % n == 0 && y0.rows() % n == 0,
                           "energy_rows: batch shape mismatch");
  notbary::detail::require(y.cols() == y0.cols(), "energy_rows: dimension mismatch");
  const std::size_t m = y.rows() / n, p = y0.rows() / n;
  notbary::detail::require(m >= 2, "energy_rows: need at least two samples per input");
  const double cross = 2.0 / static_cast<double>(m * p);
  const double within = 1.0 / static_cast<double>(m * (m - 1));
  Tensor out = Tensor::matrix(n, 1);
  const Tensor& yv = y.value();
  const Tensor& y0v = y0.value();
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      const auto ys = yv.row(i * m + s);
      for (std::size_t t = 0; t < p; ++t) a += ell(ys, y0v.row(i * p + t));
      for (std::size_t t = s + 1; t < m; ++t) b += ell(ys, yv.row(i * m + t));
    }
    out[i] = cross * a - within * 2.0 * b;
  }
  return detail::make(std::move(out), {y, y0}, [n, m, p, cross, within, ell](detail::Node& self) {
    auto& py = *self.parents[0];
    auto& p0 = *self.parents[1];
    const Tensor& yv = py.value;
    const Tensor& y0v = p0.value;
    Tensor* gy = py.requires_grad ? &py.grad_buffer() : nullptr;
    Tensor* g0 = p0.requires_grad ? &p0.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i];
      if (g == 0.0) continue;
      for (std::size_t s = 0; s < m; ++s) {
        const auto ys = yv.row(i * m + s);
        for (std::size_t t = 0; t < p; ++t) {
          const auto yt = y0v.row(i * p + t);
          if (gy) ell.accumulate_grad(ys, yt, g * cross, gy->row(i * m + s));
          if (g0) ell.accumulate_grad(yt, ys, g * cross, g0->row(i * p + t));
        }
        if (gy)
          for (std::size_t t = 0; t < m; ++t)
            if (t != s) ell.accumulate_grad(ys, yv.row(i * m + t), -2.0 * g * within, gy->row(i * m + s));
      }
    }
  });
}

namespace detail {
inline Var as_row(const Tensor& x) {
  Tensor r = Tensor::matrix(1, x.size());
  std::copy(x.data().begin(), x.data().end(), r.data().begin());
  return constant(std::move(r));
}
}  // namespace detail

/// Mean of c(x, y_s) over the batch ys (|S| x D).
inline Var estimate_classical(const GroundCost& c, const Tensor& x, const Var& ys) {
  notbary::detail::require(ys.value().rank() == 2 && ys.rows() >= 1, "estimate_classical: empty batch");
  return mean(classical_rows(c, detail::as_row(x), ys));
}

/// Analytic KL between N(mu, diag sigma^2) and a diagonal Gaussian prior.
inline Var kl_gaussian_to_prior(const Var& mu, const Var& sigma, const GaussianDist& prior) {
  return sum(kl_gaussian_rows(mu, sigma, prior));
}

/// Sample mean of c(x, mu + sigma * s) over noise rows s, plus eps * KL.
/// mu and sigma are 1 x D; noise is |S| x D.
inline Var estimate_kl_cost(const GroundCost& c, const Tensor& x, const Var& mu, const Var& sigma,
                            const Tensor& noise, double epsilon, const GaussianDist& prior) {
  notbary::detail::require(noise.rank() == 2 && noise.rows() >= 1, "estimate_kl_cost: empty noise batch");
  const std::size_t m = noise.rows();
  const Var ys = repeat_rows(mu, m) + repeat_rows(sigma, m) * constant(noise);
  const Var base = estimate_classical(c, x, ys);
  if (epsilon == 0.0) return base;
  return base + epsilon * kl_gaussian_to_prior(mu, sigma, prior);
}

/// Classical term plus gamma times the energy cross/within terms.
inline Var estimate_energy_cost(const GroundCost& c, const Tensor& x, const Var& ys, const Tensor& y0s,
                                double gamma, const Semimetric& ell) {
  notbary::detail::require(ys.value().rank() == 2 && ys.rows() >= 2,
                           "estimate_energy_cost: need at least two mapped samples");
  notbary::detail::require(y0s.rank() == 2 && y0s.rows() >= 1, "estimate_energy_cost: empty prior batch");
  const Var base = estimate_classical(c, x, ys);
  if (gamma == 0.0) return base;
  return base + gamma * sum(energy_rows(ys, constant(y0s), 1, ell));
}

}  // namespace ad

enum class EnergyEstimator {
  unbiased,     // within-sample sums over i != j; unbiased, can be negative
  v_statistic,  // within-sample sums over all pairs; zero for identical samples
};

/// Estimate of the squared energy distance
///   2 E l(a, b) - E l(a, a') - E l(b, b').
inline double energy_distance_sq(const Tensor& a, const Tensor& b, const Semimetric& ell = {},
                                 EnergyEstimator est = EnergyEstimator::unbiased) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.rows() >= 2 && b.rows() >= 2,
                  "energy_distance_sq: each sample needs at least two rows");
  detail::require(a.cols() == b.cols(), "energy_distance_sq: dimension mismatch");
  const std::size_t na = a.rows(), nb = b.rows();
  double cross = 0.0, wa = 0.0, wb = 0.0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) cross += ell(a.row(i), b.row(j));
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = i + 1; j < na; ++j) wa += ell(a.row(i), a.row(j));
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = i + 1; j < nb; ++j) wb += ell(b.row(i), b.row(j));
  const double dna = static_cast<double>(na), dnb = static_cast<double>(nb);
  const bool u = est == EnergyEstimator::unbiased;
  return 2.0 * cross / (dna * dnb) - 2.0 * wa / (dna * (u ? dna - 1.0 : dna)) -
         2.0 * wb / (dnb * (u ? dnb - 1.0 : dnb));
}

}  // namespace notbary
