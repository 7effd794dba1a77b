// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form optimal transport between Gaussians.
//
// Cost convention: bures_wasserstein_sq returns the plain squared distance
//   |m1 - m2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2),
// i.e. the optimal value of E|x - y|^2. Training uses c = 1/2 |x - y|^2; use
// half_convention() to convert.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "notbary/distributions.hpp"
#include "notbary/errors.hpp"

namespace notbary {

struct AffineMap {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd offset;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return matrix * x + offset; }
};

inline double half_convention(double squared_distance) { return 0.5 * squared_distance; }

namespace detail {

inline Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> spd_eigen(const Eigen::MatrixXd& a, const char* op) {
  require(a.rows() == a.cols() && a.rows() >= 1, std::string(op) + ": matrix must be square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  require((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * scale, std::string(op) + ": matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  require(es.info() == Eigen::Success, std::string(op) + ": eigendecomposition failed");
  require(es.eigenvalues().minCoeff() >= -1e-10 * scale, std::string(op) + ": matrix is not positive semidefinite");
  return es;
}

template <class F>
Eigen::MatrixXd spectral(const Eigen::MatrixXd& a, F f, const char* op) {
  auto es = spd_eigen(a, op);
  Eigen::VectorXd ev = es.eigenvalues().unaryExpr([&](double l) { return f(std::max(l, 1e-12)); });
  const Eigen::MatrixXd& v = es.eigenvectors();
  Eigen::MatrixXd r = v * ev.asDiagonal() * v.transpose();
  return 0.5 * (r + r.transpose());
}

}  // namespace detail

/// Principal square root of a symmetric PSD matrix (eigenvalues clamped at 1e-12).
inline Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  return detail::spectral(a, [](double l) { return std::sqrt(l); }, "sqrtm_psd");
}

inline Eigen::MatrixXd inv_sqrtm_psd(const Eigen::MatrixXd& a) {
  return detail::spectral(a, [](double l) { return 1.0 / std::sqrt(l); }, "inv_sqrtm_psd");
}

inline double bures_wasserstein_sq(const GaussianDist& g1, const GaussianDist& g2) {
  detail::require(g1.dim() == g2.dim(), "bures_wasserstein_sq: dimension mismatch");
  const Eigen::MatrixXd r1 = sqrtm_psd(g1.cov);
  const Eigen::MatrixXd cross = sqrtm_psd(r1 * g2.cov * r1);
  const double v = (g1.mean - g2.mean).squaredNorm() + g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
  return std::max(v, 0.0);
}

struct FixedPointResult {
  GaussianDist barycenter;
  std::size_t iterations = 0;
  double residual = 0.0;  // Frobenius change of the final step
};

/// Gaussian barycenter under the quadratic cost by the covariance fixed-point
/// iteration  S <- S^-1/2 (sum_k l_k (S^1/2 S_k S^1/2)^1/2)^2 S^-1/2, started
/// at sum_k l_k S_k and stopped once an update moves S by at most tol.
inline FixedPointResult fixed_point_barycenter(const std::vector<GaussianDist>& inputs,
                                               const std::vector<double>& weights, double tol = 1e-12,
                                               std::size_t max_iter = 10000) {
  detail::require(!inputs.empty() && inputs.size() == weights.size(),
                  "fixed_point_barycenter: weights must match inputs");
  double wsum = 0.0;
  for (double w : weights) {
    detail::require(w > 0.0, "fixed_point_barycenter: weights must be positive");
    wsum += w;
  }
  detail::require(std::abs(wsum - 1.0) <= 1e-12, "fixed_point_barycenter: weights must sum to 1");
  const auto d = static_cast<Eigen::Index>(inputs.front().dim());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    detail::require(inputs[k].dim() == static_cast<std::size_t>(d), "fixed_point_barycenter: dimension mismatch");
    inputs[k].validate();
    mean += weights[k] * inputs[k].mean;
    cov += weights[k] * inputs[k].cov;
  }

  double residual = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd root = sqrtm_psd(cov);
    const Eigen::MatrixXd inv_root = inv_sqrtm_psd(cov);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t k = 0; k < inputs.size(); ++k) acc += weights[k] * sqrtm_psd(root * inputs[k].cov * root);
    Eigen::MatrixXd next = inv_root * acc * acc * inv_root;
    next = 0.5 * (next + next.transpose());
    residual = (next - cov).norm();
    cov = std::move(next);
    if (residual <= tol) return {{mean, cov}, it, residual};
  }
  throw ConvergenceError("fixed_point_barycenter: no convergence after " + std::to_string(max_iter) +
                             " iterations, residual " + std::to_string(residual),
                         residual);
}

/// Optimal (Monge) map pushing P onto Q under the quadratic cost:
///   A = S_P^-1/2 (S_P^1/2 S_Q S_P^1/2)^1/2 S_P^-1/2,  b = m_Q - A m_P.
inline AffineMap gaussian_monge_map(const GaussianDist& p, const GaussianDist& q) {
  detail::require(p.dim() == q.dim(), "gaussian_monge_map: dimension mismatch");
  detail::spd_eigen(p.cov, "gaussian_monge_map");
  const Eigen::MatrixXd rp = sqrtm_psd(p.cov);
  const Eigen::MatrixXd irp = inv_sqrtm_psd(p.cov);
  Eigen::MatrixXd a = irp * sqrtm_psd(rp * q.cov * rp) * irp;
  a = 0.5 * (a + a.transpose());
  Eigen::VectorXd b = q.mean - a * p.mean;
  return {std::move(a), std::move(b)};
}

/// Pushforward of a Gaussian under an affine map.
inline GaussianDist push_forward(const GaussianDist& p, const AffineMap& t) {
  Eigen::MatrixXd cov = t.matrix * p.cov * t.matrix.transpose();
  return {t(p.mean), 0.5 * (cov + cov.transpose())};
}

/// E_{x~P} 1/2 |x - T(x)|^2 for affine T, from Gaussian moment identities.
inline double affine_transport_cost(const GaussianDist& p, const AffineMap& t) {
  const auto d = static_cast<Eigen::Index>(p.dim());
  const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(d, d) - t.matrix;
  const Eigen::VectorXd shift = p.mean - t(p.mean);
  return 0.5 * (shift.squaredNorm() + (r * p.cov * r.transpose()).trace());
}

}  // namespace notbary
