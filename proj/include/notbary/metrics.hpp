// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "notbary/costs.hpp"
#include "notbary/distributions.hpp"
#include "notbary/gaussian_oracle.hpp"
#include "notbary/transport.hpp"

namespace notbary {

/// Monte-Carlo mean with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

namespace detail {
inline Estimate mean_and_se(const std::vector<double>& xs) {
  Estimate e;
  e.count = xs.size();
  if (xs.empty()) return e;
  const double n = static_cast<double>(xs.size());
  e.value = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.value) * (x - e.value);
    e.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}
}  // namespace detail

/// Exact wrapper of an affine map as a single-layer deterministic model.
inline PlanModel plan_from_affine(const AffineMap& t) {
  const auto d = static_cast<std::size_t>(t.matrix.rows());
  const auto in = static_cast<std::size_t>(t.matrix.cols());
  MlpParams net;
  net.hidden = Activation::identity;
  net.output = Activation::identity;
  DenseLayer l{Tensor::matrix(in, d), Tensor({d})};
  l.weight.mat() = t.matrix.transpose();
  for (std::size_t j = 0; j < d; ++j) l.bias[j] = t.offset[static_cast<Eigen::Index>(j)];
  net.layers.push_back(std::move(l));
  return DeterministicMap{std::move(net)};
}

/// Conditional mean E_s T(x, s) per input row, estimated with m draws for
/// stochastic models (exact for deterministic ones).
inline Tensor conditional_mean(const PlanModel& model, const Tensor& x, CounterRng& noise_rng, std::size_t m) {
  const std::size_t ds = noise_dim(model);
  if (ds == 0) return map_forward(model, x, std::nullopt).y.value();
  const auto y = map_forward(model, x, draw_noise(noise_rng, x.rows() * m, ds)).y;
  return ad::group_mean(y, m).value();
}

/// L2-UVP in percent: 100 * E|T-hat(x) - T*(x)|^2 / var_q, with var_q the
/// total variance (covariance trace) of the true barycenter.
inline Estimate l2_uvp(const PlanModel& model, const AffineMap& t_star, Sampler& inputs, CounterRng& noise_rng,
                       double var_q, std::size_t n, std::size_t m = 64) {
  detail::require(var_q > 0.0, "l2_uvp: barycenter variance must be positive");
  detail::require(n >= 1 && m >= 1, "l2_uvp: sample counts must be positive");
  const Tensor x = inputs.sample(n);
  const Tensor y = conditional_mean(model, x, noise_rng, m);
  RowMatrix target = x.mat() * t_star.matrix.transpose();
  target.rowwise() += t_star.offset.transpose();
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i)
    err[i] = 100.0 * (y.mat().row(static_cast<Eigen::Index>(i)) - target.row(static_cast<Eigen::Index>(i))).squaredNorm() / var_q;
  return detail::mean_and_se(err);
}

struct TransportCostEstimate {
  Estimate cost;                    // E c(x, T(x, s)) with the configured ground cost
  std::optional<double> no_half;    // 2 * cost for SqEuclidean: E|x - T(x, s)|^2
};

inline TransportCostEstimate transport_cost(const PlanModel& model, Sampler& inputs, CounterRng& noise_rng,
                                            const GroundCost& c, std::size_t n, std::size_t m) {
  detail::require(n >= 1 && m >= 1, "transport_cost: sample counts must be positive");
  const PlanSample s = sample_plan(model, inputs, noise_rng, n, m);
  std::vector<double> per_x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) per_x[i] += ground_cost(c, s.x.row(i), s.y.row(i * m + j));
    per_x[i] /= static_cast<double>(m);
  }
  TransportCostEstimate out;
  out.cost = detail::mean_and_se(per_x);
  if (std::holds_alternative<SqEuclidean>(c)) out.no_half = 2.0 * out.cost.value;
  return out;
}

struct EnergyTestResult {
  double statistic = 0.0;
  std::size_t pooled = 0;
  std::size_t reference = 0;
  Eigen::VectorXd pooled_mean;
  Tensor pooled_samples;
};

/// Pools round(l_k n) pushforward samples from each model, then compares the
/// pool with n reference samples by the unbiased squared energy distance.
/// Pooled rows are put in canonical (lexicographic) order and shuffled by
/// `seed`, so the result does not depend on the order of the K models.
inline EnergyTestResult barycenter_energy_test(const std::vector<const PlanModel*>& models, std::vector<Sampler>& inputs,
                                               std::vector<CounterRng>& noise, const std::vector<double>& weights,
                                               Sampler& reference, std::size_t n, std::uint64_t seed = 0) {
  detail::require(n >= 2, "barycenter_energy_test: n must be at least 2");
  detail::require(models.size() == inputs.size() && models.size() == weights.size() && models.size() == noise.size(),
                  "barycenter_energy_test: argument counts differ");
  const std::size_t d = reference.dim();
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto nk = static_cast<std::size_t>(std::llround(weights[k] * static_cast<double>(n)));
    if (nk == 0) continue;
    const PlanSample s = sample_plan(*models[k], inputs[k], noise[k], nk, 1);
    for (std::size_t i = 0; i < nk; ++i) rows.emplace_back(s.y.row(i).begin(), s.y.row(i).end());
  }
  detail::require(rows.size() >= 2, "barycenter_energy_test: pooled sample too small");
  std::sort(rows.begin(), rows.end());
  CounterRng rng(seed, 0x706f6f6cull);
  for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng.below(i + 1)]);

  EnergyTestResult r;
  r.pooled = rows.size();
  r.reference = n;
  r.pooled_samples = Tensor::matrix(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), r.pooled_samples.row(i).begin());
  r.pooled_mean = r.pooled_samples.mat().colwise().mean().transpose();
  r.statistic = energy_distance_sq(r.pooled_samples, reference.sample(n));
  return r;
}

}  // namespace notbary
