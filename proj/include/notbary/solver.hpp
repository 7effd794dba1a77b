// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Stochastic ascent-descent on the congruent max-min barycenter objective
//
//   sup_{sum l_k f_k = 0} inf_{T_1..T_K} sum_k l_k { E C_k(x, T_k(x, .)#S) - E f_k(T_k(x, s)) }.
//
// Each outer iteration ("epoch") makes one ascent step on the potential
// networks followed by `inner_steps` descent steps on the maps, re-drawing
// batches for every step.

#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "notbary/adam.hpp"
#include "notbary/autodiff.hpp"
#include "notbary/costs.hpp"
#include "notbary/distributions.hpp"
#include "notbary/errors.hpp"
#include "notbary/mlp.hpp"
#include "notbary/rng.hpp"
#include "notbary/transport.hpp"

namespace notbary {

struct BarycenterProblem {
  std::vector<Distribution> inputs;
  std::vector<double> weights;
  std::vector<WeakCostSpec> costs;
  std::size_t dim = 0;  // target dimension D
  PlanKind plan = PlanKind::deterministic;
  std::size_t noise_dim = 0;  // 0 selects D

  std::size_t size() const noexcept { return inputs.size(); }
  std::size_t effective_noise_dim() const noexcept {
    if (plan == PlanKind::deterministic) return 0;
    if (plan == PlanKind::gaussian) return dim;
    return noise_dim == 0 ? dim : noise_dim;
  }

  void validate() const {
    const std::size_t k = inputs.size();
    detail::require(k >= 2, "BarycenterProblem: need at least two inputs");
    detail::require(weights.size() == k && costs.size() == k, "BarycenterProblem: weights/costs must match inputs");
    double s = 0.0;
    for (double w : weights) {
      detail::require(w > 0.0, "BarycenterProblem: weights must be positive");
      s += w;
    }
    detail::require(std::abs(s - 1.0) <= 1e-12, "BarycenterProblem: weights must sum to 1");
    detail::require(dim >= 1, "BarycenterProblem: target dimension must be positive");
    for (std::size_t i = 0; i < k; ++i) {
      validate_cost(costs[i]);
      const auto& ground = ground_of(costs[i]);
      if (std::holds_alternative<Twisted>(ground))
        detail::require(dim == 2 && notbary::dim(inputs[i]) == 2, "BarycenterProblem: twisted cost needs planar data");
      else
        detail::require(notbary::dim(inputs[i]) == dim, "BarycenterProblem: squared Euclidean cost needs input dim == D");
      if (const auto* kl = std::get_if<KlCost>(&costs[i])) {
        detail::require(plan == PlanKind::gaussian, "BarycenterProblem: KL cost requires the Gaussian plan model");
        detail::require(kl->prior.dim() == dim, "BarycenterProblem: KL prior dimension mismatch");
      }
      if (const auto* en = std::get_if<EnergyCost>(&costs[i])) {
        detail::require(plan != PlanKind::deterministic, "BarycenterProblem: energy cost requires a stochastic plan");
        detail::require(notbary::dim(en->prior) == dim, "BarycenterProblem: energy prior dimension mismatch");
      }
    }
  }

 private:
  static void validate_cost(const WeakCostSpec& c) { notbary::validate(c); }
};

struct TrainConfig {
  std::size_t batch_size = 1024;  // |X_k|
  std::size_t inner_steps = 3;    // M_T
  std::size_t cond_batch = 1;     // |S[x]|, ignored by deterministic maps
  std::size_t prior_batch = 1;    // |Y0[x]|, energy cost only
  double lr_potential = 1e-3;
  double lr_map = 1e-3;
  double adam_beta1 = 0.9;  // shared by both optimizers
  double adam_beta2 = 0.999;
  std::size_t epochs = 1200;
  std::uint64_t seed = 0;
  std::vector<std::size_t> map_hidden{128, 128, 128};
  std::vector<std::size_t> potential_hidden{128, 128, 128};
  Activation map_activation = Activation::relu;
  Activation potential_activation = Activation::relu;

  void validate() const {
    detail::require(batch_size >= 1 && inner_steps >= 1 && cond_batch >= 1 && prior_batch >= 1,
                    "TrainConfig: batch sizes and inner steps must be at least 1");
    detail::require(lr_potential > 0.0 && lr_map > 0.0, "TrainConfig: learning rates must be positive");
    detail::require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
                    "TrainConfig: Adam betas must lie in [0, 1)");
    for (auto w : map_hidden) detail::require(w >= 1, "TrainConfig: hidden widths must be positive");
    for (auto w : potential_hidden) detail::require(w >= 1, "TrainConfig: hidden widths must be positive");
  }
};

struct HistoryRecord {
  std::size_t epoch = 0;  // 1-based
  double v_f = 0.0;
  std::vector<double> v_t;  // per k, from the last descent step
  double wall_ms = 0.0;
};

struct RngStreams {
  std::vector<CounterRng> inputs;
  std::vector<CounterRng> noise;
  std::vector<CounterRng> priors;

  friend bool operator==(const RngStreams&, const RngStreams&) = default;
};

struct TrainState {
  std::vector<PlanModel> maps;
  PotentialBank potentials;
  AdamState potential_opt;
  AdamState map_opt;
  std::size_t epoch = 0;
  std::vector<HistoryRecord> history;
  RngStreams streams;

  std::vector<Tensor*> map_tensors() {
    std::vector<Tensor*> out;
    for (auto& m : maps)
      for (auto* t : plan_tensors(m)) out.push_back(t);
    return out;
  }
  std::vector<const Tensor*> map_tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& m : maps)
      for (const auto* t : plan_tensors(m)) out.push_back(t);
    return out;
  }
};

namespace stream_id {
inline constexpr std::uint64_t potential_init = 1000;
inline constexpr std::uint64_t map_init = 2000;
inline constexpr std::uint64_t inputs = 3000;
inline constexpr std::uint64_t noise = 4000;
inline constexpr std::uint64_t priors = 5000;
}  // namespace stream_id

inline RngStreams make_streams(std::uint64_t seed, std::size_t k) {
  RngStreams s;
  for (std::size_t i = 0; i < k; ++i) {
    s.inputs.emplace_back(seed, stream_id::inputs + i);
    s.noise.emplace_back(seed, stream_id::noise + i);
    s.priors.emplace_back(seed, stream_id::priors + i);
  }
  return s;
}

/// Fresh networks and optimizer state; per-k networks are drawn from per-k
/// streams so relabeling inputs relabels initializations.
inline TrainState init_state(const BarycenterProblem& problem, const TrainConfig& config) {
  problem.validate();
  config.validate();
  TrainState st;
  const std::size_t k = problem.size();
  st.potentials.weights = problem.weights;
  for (std::size_t i = 0; i < k; ++i) {
    CounterRng prng(config.seed, stream_id::potential_init + i);
    st.potentials.nets.push_back(
        make_mlp(problem.dim, config.potential_hidden, 1, prng, config.potential_activation));
    CounterRng mrng(config.seed, stream_id::map_init + i);
    st.maps.push_back(make_plan(problem.plan, notbary::dim(problem.inputs[i]), problem.dim,
                                problem.effective_noise_dim(), config.map_hidden, config.map_activation, mrng));
  }
  st.potentials.validate();
  st.potential_opt = AdamState({config.lr_potential, config.adam_beta1, config.adam_beta2},
                                st.potentials.tensors());
  st.map_opt = AdamState({config.lr_map, config.adam_beta1, config.adam_beta2}, st.map_tensors());
  st.streams = make_streams(config.seed, k);
  return st;
}

/// One draw of Algorithm-style batches: X_k, S[x] (m rows per x) and, for
/// energy costs, Y0[x] (p rows per x).
struct Batches {
  std::vector<Tensor> x;
  std::vector<std::optional<Tensor>> noise;
  std::vector<std::optional<Tensor>> prior;
  std::size_t cond = 1;
};

inline std::size_t conditional_size(const BarycenterProblem& problem, const TrainConfig& config) {
  return problem.plan == PlanKind::deterministic ? 1 : config.cond_batch;
}

inline Batches draw_batches(const BarycenterProblem& problem, const TrainConfig& config, RngStreams& streams,
                            bool with_priors, std::optional<std::size_t> batch_override = std::nullopt) {
  Batches b;
  const std::size_t n = batch_override.value_or(config.batch_size);
  b.cond = conditional_size(problem, config);
  const std::size_t ds = problem.effective_noise_dim();
  for (std::size_t k = 0; k < problem.size(); ++k) {
    b.x.push_back(draw(problem.inputs[k], streams.inputs[k], n));
    if (ds > 0) b.noise.emplace_back(draw_noise(streams.noise[k], n * b.cond, ds));
    else b.noise.emplace_back();
    const auto* en = std::get_if<EnergyCost>(&problem.costs[k]);
    if (with_priors && en) b.prior.emplace_back(draw(en->prior, streams.priors[k], n * config.prior_batch));
    else b.prior.emplace_back();
  }
  return b;
}

namespace detail {

inline std::optional<ad::Var> noise_var(const std::optional<Tensor>& t) {
  if (!t) return std::nullopt;
  return ad::constant(*t);
}

inline void guarded_adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& opt,
                              std::size_t epoch, const std::string& term) {
  try {
    adam_step(params, grads, opt);
  } catch (const DivergenceError&) {
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": non-finite gradient of " + term);
  }
}

inline void check_finite(const ad::Var& v, std::size_t epoch, const std::string& term) {
  if (!std::isfinite(v.item()))
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": non-finite " + term);
}

}  // namespace detail

/// sum_k l_k mean f_k(T_k(x, s)). Gradient flows only into `bank` (maps are
/// evaluated as constants).
inline ad::Var estimate_Vf(const BankBinding& bank, const std::vector<PlanModel>& maps,
                           const BarycenterProblem& problem, const Batches& b) {
  ad::Var total;
  for (std::size_t k = 0; k < problem.size(); ++k) {
    detail::require(b.x[k].rank() == 2 && b.x[k].rows() >= 1, "estimate_Vf: empty batch");
    const ad::Var y = PlanBinding(maps[k], false).forward(ad::constant(b.x[k]), detail::noise_var(b.noise[k])).y;
    const ad::Var term = problem.weights[k] * ad::mean(bank.f(k, y));
    total = total.valid() ? total + term : term;
  }
  return total;
}

inline ad::Var estimate_Vf(const TrainState& state, const BarycenterProblem& problem, const Batches& b) {
  return estimate_Vf(BankBinding(state.potentials, false), state.maps, problem, b);
}

/// Inner objective for map k: mean over x of C-hat(x, T_k(x, S[x]), Y0[x])
/// minus the mean potential f_k at the mapped points.
inline ad::Var estimate_Vt(const BankBinding& bank, const PlanBinding& map, const BarycenterProblem& problem,
                           std::size_t k, const Batches& b) {
  detail::require(b.x[k].rank() == 2 && b.x[k].rows() >= 1, "estimate_Vt: empty batch");
  const std::size_t n = b.x[k].rows();
  const ad::Var x = ad::constant(b.x[k]);
  const MapOutput out = map.forward(x, detail::noise_var(b.noise[k]));
  const ad::Var& y = out.y;
  const GroundCost& ground = ground_of(problem.costs[k]);
  ad::Var cost = ad::classical_rows(ground, x, y);
  if (const auto* kl = std::get_if<KlCost>(&problem.costs[k])) {
    detail::require(out.mu.valid(), "estimate_Vt: KL cost needs the Gaussian plan model");
    cost = cost + kl->epsilon * ad::kl_gaussian_rows(out.mu, out.sigma, kl->prior);
  } else if (const auto* en = std::get_if<EnergyCost>(&problem.costs[k])) {
    detail::require(b.prior[k].has_value(), "estimate_Vt: energy cost needs a prior batch");
    cost = cost + en->gamma * ad::energy_rows(y, ad::constant(*b.prior[k]), n, en->ell);
  }
  return ad::mean(cost) - ad::mean(bank.f(k, y));
}

inline ad::Var estimate_Vt(const TrainState& state, const BarycenterProblem& problem, std::size_t k,
                           const Batches& b) {
  return estimate_Vt(BankBinding(state.potentials, false), PlanBinding(state.maps.at(k), false), problem, k, b);
}

/// V_T = sum_k l_k V_{T_k} evaluated with every network held constant.
inline double evaluate_V(const PotentialBank& potentials, const std::vector<PlanModel>& maps,
                         const BarycenterProblem& problem, const Batches& b) {
  const BankBinding bank(potentials, false);
  double v = 0.0;
  for (std::size_t k = 0; k < problem.size(); ++k)
    v += problem.weights[k] * estimate_Vt(bank, PlanBinding(maps[k], false), problem, k, b).item();
  return v;
}

/// Potential update; returns the V_f estimate before the update. The outer
/// problem maximizes V = sum_k l_k (C_k - E f_k(T_k)) over f, and only the
/// second term depends on theta, so the step descends on V_f.
inline double ascent_step(TrainState& st, const BarycenterProblem& problem, const TrainConfig& config) {
  const Batches b = draw_batches(problem, config, st.streams, false);
  const BankBinding bank(st.potentials, true);
  const ad::Var vf = estimate_Vf(bank, st.maps, problem, b);
  detail::check_finite(vf, st.epoch + 1, "V_f");
  ad::backward(vf);
  auto params = st.potentials.tensors();
  const auto grads = bank.grads();
  detail::guarded_adam_step(params, grads, st.potential_opt, st.epoch + 1, "V_f");
  return vf.item();
}

/// Descent step on all maps jointly; returns the per-k V_{T_k} estimates.
inline std::vector<double> descent_step(std::vector<PlanModel>& maps, AdamState& opt, const PotentialBank& potentials,
                                        const BarycenterProblem& problem, const TrainConfig& config,
                                        RngStreams& streams, std::size_t epoch) {
  const Batches b = draw_batches(problem, config, streams, true);
  const BankBinding bank(potentials, false);
  std::vector<PlanBinding> bound;
  for (const auto& m : maps) bound.emplace_back(m, true);
  std::vector<double> parts;
  ad::Var vt;
  for (std::size_t k = 0; k < problem.size(); ++k) {
    const ad::Var vk = estimate_Vt(bank, bound[k], problem, k, b);
    detail::check_finite(vk, epoch, "V_T[" + std::to_string(k + 1) + "]");
    parts.push_back(vk.item());
    const ad::Var term = problem.weights[k] * vk;
    vt = vt.valid() ? vt + term : term;
  }
  ad::backward(vt);
  std::vector<Tensor*> params;
  std::vector<Tensor> grads;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    for (auto* t : plan_tensors(maps[k])) params.push_back(t);
    for (auto& g : bound[k].grads()) grads.push_back(std::move(g));
  }
  detail::guarded_adam_step(params, grads, opt, epoch, "V_T");
  return parts;
}

/// One outer iteration: potential ascent, then `inner_steps` map descents.
inline const HistoryRecord& train_epoch(TrainState& st, const BarycenterProblem& problem, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  HistoryRecord rec;
  rec.epoch = st.epoch + 1;
  rec.v_f = ascent_step(st, problem, config);
  for (std::size_t i = 0; i < config.inner_steps; ++i)
    rec.v_t = descent_step(st.maps, st.map_opt, st.potentials, problem, config, st.streams, rec.epoch);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  ++st.epoch;
  st.history.push_back(std::move(rec));
  return st.history.back();
}

using EpochCallback = std::function<void(const TrainState&)>;

/// Continues training until `config.epochs` outer iterations are complete.
inline void train_until(TrainState& st, const BarycenterProblem& problem, const TrainConfig& config,
                        const EpochCallback& on_epoch = {}) {
  while (st.epoch < config.epochs) {
    train_epoch(st, problem, config);
    if (on_epoch) on_epoch(st);
  }
}

inline TrainState train(const BarycenterProblem& problem, const TrainConfig& config,
                        const EpochCallback& on_epoch = {}) {
  TrainState st = init_state(problem, config);
  train_until(st, problem, config, on_epoch);
  return st;
}

// ---- duality gap diagnostic ------------------------------------------------

struct Delta1Budget {
  std::size_t steps = 500;         // descent steps of the fresh inner solve
  std::size_t eval_batch = 4096;   // inputs per k for both V evaluations
  bool warm_start = false;         // start from the current maps instead of fresh networks
  double lr = 1e-3;
  std::uint64_t seed = 0x5eed;
  std::size_t window = 50;         // plateau test compares the last two windows
  double plateau_tol = 1e-2;       // relative change accepted as a plateau
};

struct Delta1Result {
  double value = 0.0;      // V(f, pi) - L-hat(f)
  double v_current = 0.0;  // V at the trained maps
  double v_inner = 0.0;    // V after re-solving the inner problem
  bool converged = false;
  std::size_t steps = 0;
};

/// Estimates delta_1 = V(f, pi) - inf_pi V(f, pi) for the current potentials by
/// re-minimizing over maps with the potentials frozen. Both V values use the
/// same evaluation batches.
inline Delta1Result estimate_delta1(const TrainState& st, const BarycenterProblem& problem, const TrainConfig& config,
                                    const Delta1Budget& budget) {
  RngStreams eval_streams = make_streams(budget.seed, problem.size());
  const Batches eval = draw_batches(problem, config, eval_streams, true, budget.eval_batch);

  Delta1Result r;
  r.v_current = evaluate_V(st.potentials, st.maps, problem, eval);

  std::vector<PlanModel> maps;
  if (budget.warm_start) {
    maps = st.maps;
  } else {
    for (std::size_t k = 0; k < problem.size(); ++k) {
      CounterRng rng(budget.seed, stream_id::map_init + k);
      maps.push_back(make_plan(problem.plan, notbary::dim(problem.inputs[k]), problem.dim,
                               problem.effective_noise_dim(), config.map_hidden, config.map_activation, rng));
    }
  }
  std::vector<const Tensor*> tensors;
  for (const auto& m : maps)
    for (const auto* t : plan_tensors(m)) tensors.push_back(t);
  AdamState opt({budget.lr}, tensors);
  RngStreams inner_streams = make_streams(budget.seed ^ 0x9E3779B97F4A7C15ull, problem.size());

  std::vector<double> trace;
  for (std::size_t i = 0; i < budget.steps; ++i) {
    const auto parts = descent_step(maps, opt, st.potentials, problem, config, inner_streams, st.epoch);
    double v = 0.0;
    for (std::size_t k = 0; k < parts.size(); ++k) v += problem.weights[k] * parts[k];
    trace.push_back(v);
  }
  r.steps = budget.steps;
  r.v_inner = evaluate_V(st.potentials, maps, problem, eval);
  r.value = r.v_current - r.v_inner;

  if (budget.steps == 0) {
    r.converged = true;
  } else if (trace.size() >= 2 * budget.window && budget.window > 0) {
    auto window_mean = [&](std::size_t end) {
      double s = 0.0;
      for (std::size_t i = end - budget.window; i < end; ++i) s += trace[i];
      return s / static_cast<double>(budget.window);
    };
    const double last = window_mean(trace.size());
    const double prev = window_mean(trace.size() - budget.window);
    r.converged = std::abs(last - prev) <= budget.plateau_tol * std::max(1.0, std::abs(last));
  }
  return r;
}

}  // namespace notbary
