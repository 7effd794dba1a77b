// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "notbary/errors.hpp"
#include "notbary/rng.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }

  /// Throws ContractViolation unless cov is symmetric (1e-12) with smallest
  /// eigenvalue at least 1e-9.
  void validate() const {
    detail::require(mean.size() >= 1, "GaussianDist: empty mean");
    detail::require(cov.rows() == mean.size() && cov.cols() == mean.size(),
                    "GaussianDist: covariance shape does not match mean");
    detail::require(mean.allFinite() && cov.allFinite(), "GaussianDist: non-finite entries");
    detail::require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
                    "GaussianDist: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    detail::require(es.eigenvalues().minCoeff() >= 1e-9,
                    "GaussianDist: covariance is not positive definite");
  }

  static GaussianDist isotropic(Eigen::VectorXd mean, double variance) {
    const auto d = mean.size();
    return {std::move(mean), variance * Eigen::MatrixXd::Identity(d, d)};
  }

  static GaussianDist standard(std::size_t d) {
    return isotropic(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)), 1.0);
  }
};

// ---- twister ---------------------------------------------------------------

/// Rotates a planar point by angle kappa * |x|.
inline std::array<double, 2> twist(std::array<double, 2> x, double kappa) {
  const double angle = kappa * std::hypot(x[0], x[1]);
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * x[0] - s * x[1], s * x[0] + c * x[1]};
}

/// Inverse of twist: the rotation angle depends only on the (preserved) norm.
inline std::array<double, 2> untwist(std::array<double, 2> y, double kappa) {
  return twist(y, -kappa);
}

// ---- sources ---------------------------------------------------------------

struct GaussianSource {
  GaussianDist dist;
  Eigen::MatrixXd chol;  // lower factor of dist.cov

  explicit GaussianSource(GaussianDist d) : dist(std::move(d)) {
    dist.validate();
    Eigen::LLT<Eigen::MatrixXd> llt(dist.cov);
    detail::require(llt.info() == Eigen::Success, "GaussianSource: Cholesky failed");
    chol = llt.matrixL();
  }
};

/// untwist applied to draws from a Gaussian.
struct TwisterPushforward {
  GaussianSource base;
  double kappa;
};

/// Uniform resampling (with replacement) of the rows of a dataset.
struct Empirical {
  Tensor data;
};

struct DiracMixture {
  Tensor points;
  std::vector<double> weights;
};

using Distribution = std::variant<GaussianSource, TwisterPushforward, Empirical, DiracMixture>;

inline std::size_t dim(const Distribution& d) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianSource>) return s.dist.dim();
        else if constexpr (std::is_same_v<T, TwisterPushforward>) return 2;
        else if constexpr (std::is_same_v<T, Empirical>) return s.data.cols();
        else return s.points.cols();
      },
      d);
}

namespace detail {

inline Tensor draw_gaussian(const GaussianSource& g, CounterRng& rng, std::size_t n) {
  const std::size_t d = g.dist.dim();
  Tensor z = Tensor::matrix(n, d);
  rng.fill_normal(z.data());
  Tensor out = Tensor::matrix(n, d);
  out.mat().noalias() = z.mat() * g.chol.transpose();
  out.mat().rowwise() += g.dist.mean.transpose();
  return out;
}

}  // namespace detail

/// Draws n i.i.d. rows from `dist`, advancing `rng`.
inline Tensor draw(const Distribution& dist, CounterRng& rng, std::size_t n) {
  detail::require(n >= 1, "sample: count must be positive");
  return std::visit(
      [&](const auto& s) -> Tensor {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianSource>) {
          return detail::draw_gaussian(s, rng, n);
        } else if constexpr (std::is_same_v<T, TwisterPushforward>) {
          Tensor out = detail::draw_gaussian(s.base, rng, n);
          for (std::size_t i = 0; i < n; ++i) {
            const auto y = untwist({out(i, 0), out(i, 1)}, s.kappa);
            out(i, 0) = y[0];
            out(i, 1) = y[1];
          }
          return out;
        } else if constexpr (std::is_same_v<T, Empirical>) {
          detail::require(s.data.rank() == 2, "sample: empirical dataset is empty");
          const std::size_t rows = s.data.rows(), d = s.data.cols();
          Tensor out = Tensor::matrix(n, d);
          for (std::size_t i = 0; i < n; ++i) {
            const auto src = s.data.row(rng.below(rows));
            std::copy(src.begin(), src.end(), out.row(i).begin());
          }
          return out;
        } else {
          const std::size_t d = s.points.cols();
          detail::require(s.weights.size() == s.points.rows(), "sample: mixture weight count mismatch");
          std::vector<double> cdf(s.weights.size());
          double acc = 0.0;
          for (std::size_t k = 0; k < cdf.size(); ++k) cdf[k] = (acc += s.weights[k]);
          Tensor out = Tensor::matrix(n, d);
          for (std::size_t i = 0; i < n; ++i) {
            const double u = rng.uniform() * acc;
            std::size_t k = 0;
            while (k + 1 < cdf.size() && u >= cdf[k]) ++k;
            const auto src = s.points.row(k);
            std::copy(src.begin(), src.end(), out.row(i).begin());
          }
          return out;
        }
      },
      dist);
}

/// A distribution bundled with its own random stream.
class Sampler {
 public:
  Sampler(Distribution dist, std::uint64_t seed, std::uint64_t stream = 0)
      : dist_(std::move(dist)), rng_(seed, stream) {}
  Sampler(Distribution dist, CounterRng rng) : dist_(std::move(dist)), rng_(rng) {}

  Tensor sample(std::size_t n) { return draw(dist_, rng_, n); }

  std::size_t dim() const { return notbary::dim(dist_); }
  const Distribution& distribution() const noexcept { return dist_; }
  const CounterRng& rng() const noexcept { return rng_; }
  CounterRng& rng() noexcept { return rng_; }

 private:
  Distribution dist_;
  CounterRng rng_;
};

// ---- benchmark instances ---------------------------------------------------

struct TwisterInstance {
  std::vector<Distribution> inputs;
  std::vector<double> weights;
  double kappa;
  GaussianDist ground_truth;
  std::vector<Eigen::Vector2d> centers;
  std::uint64_t seed = 0;

  /// One sampler per input, on streams 0, 1, 2 of `seed`.
  std::vector<Sampler> samplers() const {
    std::vector<Sampler> out;
    for (std::size_t k = 0; k < inputs.size(); ++k) out.emplace_back(inputs[k], seed, k);
    return out;
  }
};

/// Three inputs untwist#N(m_k, sigma^2 I) with m_k on a circle of radius r at
/// 90, 210 and 330 degrees. Their barycenter under the twisted quadratic cost
/// is N(0, sigma^2 I).
inline TwisterInstance make_twister_instance(double radius, double sigma, double kappa,
                                            std::uint64_t seed = 0) {
  detail::require(radius > 0.0 && sigma > 0.0, "make_twister_instance: radius and sigma must be positive");
  TwisterInstance inst;
  inst.kappa = kappa;
  inst.seed = seed;
  for (double deg : {90.0, 210.0, 330.0}) {
    const double a = deg * std::numbers::pi / 180.0;
    Eigen::Vector2d m(radius * std::cos(a), radius * std::sin(a));
    inst.centers.push_back(m);
    inst.inputs.emplace_back(
        TwisterPushforward{GaussianSource(GaussianDist::isotropic(m, sigma * sigma)), kappa});
    inst.weights.push_back(1.0 / 3.0);
  }
  inst.ground_truth = GaussianDist::isotropic(Eigen::Vector2d::Zero(), sigma * sigma);
  return inst;
}

/// K random Gaussians in dimension D: cov = A A^T + 0.5 I with A_ij ~ N(0, 1/D),
/// mean ~ N(0, 4 I). Draw order per k: mean (D values), then A row-major.
inline std::vector<GaussianDist> random_gaussian_instance(std::size_t dim, std::size_t k,
                                                          std::uint64_t seed) {
  detail::require(dim >= 1 && k >= 2, "random_gaussian_instance: need D >= 1 and K >= 2");
  CounterRng rng(seed, 0x6761757373ull);
  const auto d = static_cast<Eigen::Index>(dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<GaussianDist> out;
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::VectorXd mean(d);
    for (Eigen::Index j = 0; j < d; ++j) mean[j] = 2.0 * rng.normal();
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) a(r, c) = scale * rng.normal();
    Eigen::MatrixXd cov = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(d, d);
    cov = 0.5 * (cov + cov.transpose());
    out.push_back({std::move(mean), std::move(cov)});
  }
  return out;
}

/// Loads a CSV dataset: one header row, then one sample per line. Lines
/// starting with '#' are ignored.
inline Tensor load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("load_csv_dataset: cannot open " + path);
  std::string line;
  bool header_seen = false;
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ContractViolation("load_csv_dataset: bad number '" + cell + "' in " + path);
      }
      ++c;
    }
    if (rows == 0) cols = c;
    detail::require(c == cols && c > 0, "load_csv_dataset: ragged row in " + path);
    ++rows;
  }
  detail::require(rows > 0, "load_csv_dataset: empty dataset " + path);
  return Tensor({rows, cols}, std::move(values));
}

}  // namespace notbary
