// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "notbary/autodiff.hpp"
#include "notbary/distributions.hpp"
#include "notbary/errors.hpp"
#include "notbary/mlp.hpp"
#include "notbary/rng.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

/// y = T(x); conditional plans are Dirac masses.
struct DeterministicMap {
  MlpParams net;
};

/// y = T(x, s) with s ~ N(0, I_{noise_dim}); the network sees [x, s].
struct StochasticMap {
  MlpParams net;
  std::size_t noise_dim = 1;
};

/// y = mu(x) + sigma(x) * s, sigma = softplus(scale_net(x)) + floor.
struct GaussianModel {
  static constexpr double kSigmaFloor = 1e-6;
  MlpParams mean_net;
  MlpParams scale_net;  // raw output, softplus applied in forward
};

using PlanModel = std::variant<DeterministicMap, StochasticMap, GaussianModel>;

enum class PlanKind { deterministic, stochastic, gaussian };

inline std::string to_string(PlanKind k) {
  switch (k) {
    case PlanKind::deterministic: return "deterministic";
    case PlanKind::stochastic: return "stochastic";
    case PlanKind::gaussian: return "gaussian";
  }
  return "deterministic";
}

inline PlanKind plan_kind_from_string(const std::string& s) {
  if (s == "deterministic") return PlanKind::deterministic;
  if (s == "stochastic") return PlanKind::stochastic;
  if (s == "gaussian") return PlanKind::gaussian;
  throw ContractViolation("unknown plan kind '" + s + "'");
}

inline PlanKind kind_of(const PlanModel& m) {
  switch (m.index()) {
    case 0: return PlanKind::deterministic;
    case 1: return PlanKind::stochastic;
    default: return PlanKind::gaussian;
  }
}

inline std::size_t output_dim(const PlanModel& m) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianModel>) return p.mean_net.output_width();
        else return p.net.output_width();
      },
      m);
}

inline std::size_t input_dim(const PlanModel& m) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianModel>) return p.mean_net.input_width();
        else if constexpr (std::is_same_v<T, StochasticMap>) return p.net.input_width() - p.noise_dim;
        else return p.net.input_width();
      },
      m);
}

/// Width of the auxiliary noise consumed per output sample; 0 for Dirac maps.
inline std::size_t noise_dim(const PlanModel& m) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianModel>) return p.mean_net.output_width();
        else if constexpr (std::is_same_v<T, StochasticMap>) return p.noise_dim;
        else return 0;
      },
      m);
}

/// Networks of a model in canonical order.
inline std::vector<const MlpParams*> networks(const PlanModel& m) {
  return std::visit(
      [](const auto& p) -> std::vector<const MlpParams*> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianModel>) return {&p.mean_net, &p.scale_net};
        else return {&p.net};
      },
      m);
}

inline std::vector<MlpParams*> networks(PlanModel& m) {
  return std::visit(
      [](auto& p) -> std::vector<MlpParams*> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GaussianModel>) return {&p.mean_net, &p.scale_net};
        else return {&p.net};
      },
      m);
}

inline std::vector<Tensor*> plan_tensors(PlanModel& m) {
  std::vector<Tensor*> out;
  for (auto* net : networks(m))
    for (auto* t : net->tensors()) out.push_back(t);
  return out;
}

inline std::vector<const Tensor*> plan_tensors(const PlanModel& m) {
  std::vector<const Tensor*> out;
  for (const auto* net : networks(m))
    for (const auto* t : net->tensors()) out.push_back(t);
  return out;
}

inline PlanModel make_plan(PlanKind kind, std::size_t in, std::size_t out, std::size_t noise,
                           const std::vector<std::size_t>& hidden, Activation act, CounterRng& rng) {
  switch (kind) {
    case PlanKind::deterministic:
      return DeterministicMap{make_mlp(in, hidden, out, rng, act)};
    case PlanKind::stochastic:
      detail::require(noise >= 1, "make_plan: stochastic maps need noise_dim >= 1");
      return StochasticMap{make_mlp(in + noise, hidden, out, rng, act), noise};
    case PlanKind::gaussian: {
      auto mean_net = make_mlp(in, hidden, out, rng, act);
      auto scale_net = make_mlp(in, hidden, out, rng, act);
      return GaussianModel{std::move(mean_net), std::move(scale_net)};
    }
  }
  throw ContractViolation("make_plan: unknown kind");
}

struct MapOutput {
  ad::Var y;      // (n*m) x D, or n x D for deterministic maps
  ad::Var mu;     // Gaussian model only: n x D
  ad::Var sigma;  // Gaussian model only: n x D
};

/// Graph leaves for one forward pass of a PlanModel.
class PlanBinding {
 public:
  PlanBinding(const PlanModel& model, bool trainable) : model_(&model) {
    for (const auto* net : networks(model)) nets_.emplace_back(*net, trainable);
  }

  /// x is n x D_in. `noise` holds m rows per input (n*m rows total) and is
  /// required for stochastic variants, ignored by deterministic maps.
  MapOutput forward(const ad::Var& x, const std::optional<ad::Var>& noise) const {
    return std::visit(
        [&](const auto& p) -> MapOutput {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, DeterministicMap>) {
            return {nets_[0].forward(x), {}, {}};
          } else {
            detail::require(noise.has_value(), "map_forward: stochastic model requires a noise batch");
            detail::require(noise->rows() % x.rows() == 0, "map_forward: noise rows must be a multiple of inputs");
            const std::size_t m = noise->rows() / x.rows();
            if constexpr (std::is_same_v<T, StochasticMap>) {
              detail::require(noise->cols() == p.noise_dim, "map_forward: noise width mismatch");
              return {nets_[0].forward(ad::concat_cols(ad::repeat_rows(x, m), *noise)), {}, {}};
            } else {
              detail::require(noise->cols() == p.mean_net.output_width(), "map_forward: noise width mismatch");
              ad::Var mu = nets_[0].forward(x);
              ad::Var sigma = ad::add_scalar(ad::softplus(nets_[1].forward(x)), GaussianModel::kSigmaFloor);
              ad::Var y = ad::repeat_rows(mu, m) + ad::repeat_rows(sigma, m) * *noise;
              return {y, mu, sigma};
            }
          }
        },
        *model_);
  }

  /// Gradients in plan_tensors() order.
  std::vector<Tensor> grads() const {
    std::vector<Tensor> out;
    for (const auto& b : nets_)
      for (auto& g : b.grads()) out.push_back(std::move(g));
    return out;
  }

 private:
  const PlanModel* model_;
  std::vector<MlpBinding> nets_;
};

inline MapOutput map_forward(const PlanModel& model, const Tensor& x, const std::optional<Tensor>& noise) {
  std::optional<ad::Var> s;
  if (noise) s = ad::constant(*noise);
  return PlanBinding(model, false).forward(ad::constant(x), s);
}

inline Tensor draw_noise(CounterRng& rng, std::size_t rows, std::size_t dim) {
  Tensor s = Tensor::matrix(rows, dim);
  rng.fill_normal(s.data());
  return s;
}

// ---- congruent potentials --------------------------------------------------

/// Potentials f_k = g_k - sum_j lambda_j g_j built from K scalar networks, so
/// that sum_k lambda_k f_k vanishes identically.
struct PotentialBank {
  std::vector<MlpParams> nets;
  std::vector<double> weights;

  std::size_t size() const noexcept { return nets.size(); }

  void validate() const {
    detail::require(nets.size() == weights.size() && !nets.empty(), "PotentialBank: weight count mismatch");
    double s = 0.0;
    for (double w : weights) {
      detail::require(w > 0.0, "PotentialBank: weights must be positive");
      s += w;
    }
    detail::require(std::abs(s - 1.0) <= 1e-12, "PotentialBank: weights must sum to 1");
    for (const auto& n : nets) detail::require(n.output_width() == 1, "PotentialBank: networks must be scalar");
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& n : nets)
      for (auto* t : n.tensors()) out.push_back(t);
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& n : nets)
      for (const auto* t : n.tensors()) out.push_back(t);
    return out;
  }
};

inline PotentialBank make_potential_bank(std::size_t dim, const std::vector<double>& weights,
                                         const std::vector<std::size_t>& hidden, Activation act,
                                         CounterRng& rng) {
  PotentialBank bank;
  bank.weights = weights;
  for (std::size_t k = 0; k < weights.size(); ++k) bank.nets.push_back(make_mlp(dim, hidden, 1, rng, act));
  bank.validate();
  return bank;
}

class BankBinding {
 public:
  BankBinding(const PotentialBank& bank, bool trainable) : bank_(&bank) {
    for (const auto& n : bank.nets) nets_.emplace_back(n, trainable);
  }

  ad::Var g(std::size_t k, const ad::Var& y) const { return nets_.at(k).forward(y); }

  /// All f_k evaluated at the same points y.
  std::vector<ad::Var> all(const ad::Var& y) const {
    std::vector<ad::Var> gs;
    for (std::size_t j = 0; j < nets_.size(); ++j) gs.push_back(g(j, y));
    ad::Var avg = bank_->weights[0] * gs[0];
    for (std::size_t j = 1; j < gs.size(); ++j) avg = avg + bank_->weights[j] * gs[j];
    std::vector<ad::Var> out;
    for (const auto& gk : gs) out.push_back(gk - avg);
    return out;
  }

  ad::Var f(std::size_t k, const ad::Var& y) const {
    detail::require(k < nets_.size(), "potential_eval: index out of range");
    return all(y)[k];
  }

  std::vector<Tensor> grads() const {
    std::vector<Tensor> out;
    for (const auto& b : nets_)
      for (auto& g : b.grads()) out.push_back(std::move(g));
    return out;
  }

 private:
  const PotentialBank* bank_;
  std::vector<MlpBinding> nets_;
};

/// f_k(y) for a batch y (n x D), 0-based k; returns n x 1.
inline ad::Var potential_eval(const PotentialBank& bank, std::size_t k, const Tensor& y) {
  detail::require(k < bank.size(), "potential_eval: index out of range");
  return BankBinding(bank, false).f(k, ad::constant(y));
}

struct PlanSample {
  Tensor x;            // n x D_in
  Tensor y;            // (n*m) x D, m consecutive rows per input
  std::size_t m = 1;
};

/// n inputs from `inputs`, m conditional outputs each.
inline PlanSample sample_plan(const PlanModel& model, Sampler& inputs, CounterRng& noise_rng,
                              std::size_t n, std::size_t m) {
  detail::require(n >= 1 && m >= 1, "sample_plan: counts must be positive");
  PlanSample out;
  out.x = inputs.sample(n);
  out.m = m;
  const std::size_t ds = noise_dim(model);
  if (ds == 0) {
    out.y = ad::repeat_rows(map_forward(model, out.x, std::nullopt).y, m).value();
  } else {
    out.y = map_forward(model, out.x, draw_noise(noise_rng, n * m, ds)).y.value();
  }
  return out;
}

}  // namespace notbary
