// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end experiment driver: builds the problem from a config, trains,
// evaluates against the known ground truth and writes the run directory:
//
//   config.json     effective config, defaults included
//   history.csv     epoch, V_f, V_T per input (deterministic given the seed)
//   timing.csv      wall-clock milliseconds per epoch
//   metrics.json    evaluation report, or a partial report after divergence
//   samples/*.csv   inputs, pushforwards and ground-truth draws for plotting
//   checkpoint/     latest checkpoint
//
// Every file is replaced atomically.

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "notbary/checkpoint.hpp"
#include "notbary/config.hpp"
#include "notbary/costs.hpp"
#include "notbary/distributions.hpp"
#include "notbary/gaussian_oracle.hpp"
#include "notbary/metrics.hpp"
#include "notbary/serialization.hpp"
#include "notbary/solver.hpp"

namespace notbary {

inline constexpr const char* kHistorySchema = "# notbary history v1";
inline constexpr const char* kTimingSchema = "# notbary timing v1";
inline constexpr const char* kSamplesSchema = "# notbary samples v1";
inline constexpr const char* kMetricsSchema = "notbary-metrics v1";

/// Everything derived from a config before training starts.
struct ExperimentSetup {
  BarycenterProblem problem;
  std::optional<TwisterInstance> twister;
  std::vector<GaussianDist> gaussians;        // gaussian-benchmark inputs
  std::optional<FixedPointResult> oracle;     // gaussian-benchmark barycenter
  std::optional<GaussianDist> ground_truth;   // known barycenter distribution, if any
};

inline ExperimentSetup build_setup(const ExperimentConfig& c) {
  ExperimentSetup s;
  auto& p = s.problem;
  p.dim = c.dim;
  p.weights = c.weights;
  double wsum = 0.0;
  for (double w : c.weights) wsum += w;
  for (double& w : p.weights) w /= wsum;
  p.plan = c.plan;
  p.noise_dim = c.noise_dim;

  GroundCost ground = SqEuclidean{};
  if (c.experiment == kExperimentTwister) {
    s.twister = make_twister_instance(c.twister.radius, c.twister.sigma, c.twister.kappa);
    p.inputs = s.twister->inputs;
    s.ground_truth = s.twister->ground_truth;
    ground = Twisted{c.twister.kappa};
  } else if (c.experiment == kExperimentGaussian) {
    s.gaussians = random_gaussian_instance(c.dim, c.k, c.effective_instance_seed());
    for (const auto& g : s.gaussians) p.inputs.emplace_back(GaussianSource(g));
    s.oracle = fixed_point_barycenter(s.gaussians, p.weights);
    s.ground_truth = s.oracle->barycenter;
  } else {
    for (double x : c.dirac_points) p.inputs.emplace_back(DiracMixture{Tensor::matrix({{x}}), {1.0}});
  }

  Eigen::VectorXd prior_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.dim));
  for (std::size_t i = 0; i < c.cost.prior_mean.size(); ++i) prior_mean[static_cast<Eigen::Index>(i)] = c.cost.prior_mean[i];
  const GaussianDist prior = GaussianDist::isotropic(prior_mean, c.cost.prior_var);
  for (std::size_t k = 0; k < c.k; ++k) {
    if (c.cost.family == "kl") p.costs.emplace_back(KlCost{ground, c.cost.epsilon, prior});
    else if (c.cost.family == "energy") p.costs.emplace_back(EnergyCost{ground, c.cost.gamma, Semimetric{c.cost.alpha}, GaussianSource(prior)});
    else p.costs.emplace_back(ClassicalCost{ground});
  }
  p.validate();
  return s;
}

// ---- file output -----------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string history_csv(const std::vector<HistoryRecord>& history, std::size_t k) {
  std::ostringstream os;
  os << kHistorySchema << "\nepoch,v_f";
  for (std::size_t i = 1; i <= k; ++i) os << ",v_t_" << i;
  os << '\n';
  for (const auto& r : history) {
    os << r.epoch << ',' << detail::fmt_double(r.v_f);
    for (double v : r.v_t) os << ',' << detail::fmt_double(v);
    os << '\n';
  }
  return os.str();
}

inline std::string timing_csv(const std::vector<HistoryRecord>& history) {
  std::ostringstream os;
  os << kTimingSchema << "\nepoch,wall_ms\n";
  for (const auto& r : history) os << r.epoch << ',' << detail::fmt_double(r.wall_ms) << '\n';
  return os.str();
}

inline std::string samples_csv(const Tensor& rows, std::size_t max_rows) {
  std::ostringstream os;
  os << kSamplesSchema << '\n';
  for (std::size_t j = 0; j < rows.cols(); ++j) os << (j ? "," : "") << 'x' << j;
  os << '\n';
  const std::size_t n = std::min(rows.rows(), max_rows);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = rows.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << detail::fmt_double(r[j]);
    os << '\n';
  }
  return os.str();
}

// ---- evaluation --------------------------------------------------------------

namespace eval_stream {
inline constexpr std::uint64_t inputs = 6000;
inline constexpr std::uint64_t noise = 7000;
inline constexpr std::uint64_t reference = 8000;
}  // namespace eval_stream

inline nlohmann::json estimate_json(const Estimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"count", e.count}};
}

/// Metric report for trained maps. Evaluation streams are derived from the
/// config seed and are independent of the training streams.
inline nlohmann::json evaluate(const ExperimentConfig& c, const ExperimentSetup& s, const TrainState& st) {
  using nlohmann::json;
  const auto& p = s.problem;
  const std::size_t k = p.size();
  const std::size_t n = c.eval.n;
  json r = {{"eval_samples", n}, {"noise_draws", c.eval.m}, {"seed", c.seed}};

  auto input_sampler = [&](std::size_t i) { return Sampler(p.inputs[i], c.seed, eval_stream::inputs + i); };
  auto noise_rng = [&](std::size_t i) { return CounterRng(c.seed, eval_stream::noise + i); };

  json costs = json::array();
  for (std::size_t i = 0; i < k; ++i) {
    Sampler in = input_sampler(i);
    CounterRng nr = noise_rng(i);
    const auto tc = transport_cost(st.maps[i], in, nr, ground_of(p.costs[i]), n, 1);
    json e = estimate_json(tc.cost);
    if (tc.no_half) e["no_half"] = *tc.no_half;
    costs.push_back(e);
  }
  r["transport_cost"] = costs;

  if (s.oracle) {
    const auto& bary = s.oracle->barycenter;
    const double var_q = bary.cov.trace();
    json uvp = json::array();
    double weighted = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      Sampler in = input_sampler(i);
      CounterRng nr = noise_rng(i);
      const auto e = l2_uvp(st.maps[i], gaussian_monge_map(s.gaussians[i], bary), in, nr, var_q, n, c.eval.m);
      uvp.push_back(estimate_json(e));
      weighted += p.weights[i] * e.value;
    }
    r["l2_uvp"] = uvp;
    r["l2_uvp_weighted"] = weighted;
    r["barycenter_variance"] = var_q;
    r["oracle_iterations"] = s.oracle->iterations;
  }

  if (s.ground_truth) {
    std::vector<const PlanModel*> models;
    std::vector<Sampler> ins;
    std::vector<CounterRng> noise;
    for (std::size_t i = 0; i < k; ++i) {
      models.push_back(&st.maps[i]);
      ins.push_back(input_sampler(i));
      noise.push_back(CounterRng(c.seed, eval_stream::noise + 100 + i));
    }
    Sampler ref(GaussianSource(*s.ground_truth), c.seed, eval_stream::reference);
    const auto et = barycenter_energy_test(models, ins, noise, p.weights, ref, n, c.seed);
    std::vector<double> mean(et.pooled_mean.data(), et.pooled_mean.data() + et.pooled_mean.size());
    r["energy_test"] = {{"statistic", et.statistic}, {"pooled", et.pooled}, {"reference", et.reference},
                        {"pooled_mean", mean}, {"pooled_mean_norm", et.pooled_mean.norm()}};
    // Projection of the pooled mean onto the prior mean's direction; reported
    // for unregularized runs too, as the baseline for regularized ones.
    if (!c.cost.prior_mean.empty()) {
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(et.pooled_mean.size());
      for (std::size_t j = 0; j < c.cost.prior_mean.size(); ++j) dir[static_cast<Eigen::Index>(j)] = c.cost.prior_mean[j];
      if (dir.norm() > 0.0) r["energy_test"]["prior_projection"] = et.pooled_mean.dot(dir / dir.norm());
    }
  }

  if (c.experiment == kExperimentDirac) {
    double midpoint = 0.0;
    for (std::size_t i = 0; i < k; ++i) midpoint += p.weights[i] * c.dirac_points[i];
    json outs = json::array();
    double worst = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const Tensor x = Tensor::matrix({{c.dirac_points[i]}});
      CounterRng nr = noise_rng(i);
      const double y = conditional_mean(st.maps[i], x, nr, c.eval.m).item();
      outs.push_back(y);
      worst = std::max(worst, std::abs(y - midpoint));
    }
    r["map_outputs"] = outs;
    r["midpoint"] = midpoint;
    r["max_deviation"] = worst;
  }

  if (c.eval.delta1_steps > 0) {
    Delta1Budget budget;
    budget.steps = c.eval.delta1_steps;
    budget.seed = c.seed ^ 0x5eedull;
    const auto d = estimate_delta1(st, p, c.train, budget);
    r["delta1"] = {{"value", d.value}, {"v_current", d.v_current}, {"v_inner", d.v_inner},
                   {"converged", d.converged}, {"steps", d.steps}};
  }
  return r;
}

/// Draws from inputs, pushforwards and ground truth for plotting.
inline void write_samples(const ExperimentConfig& c, const ExperimentSetup& s, const TrainState& st,
                          const std::filesystem::path& dir) {
  const std::size_t n = c.sample_rows;
  const std::size_t rows = n;
  for (std::size_t i = 0; i < s.problem.size(); ++i) {
    Sampler in(s.problem.inputs[i], c.seed, eval_stream::inputs + 200 + i);
    CounterRng nr(c.seed, eval_stream::noise + 200 + i);
    const PlanSample ps = sample_plan(st.maps[i], in, nr, rows, 1);
    write_file_atomic(dir / ("input_" + std::to_string(i + 1) + ".csv"), samples_csv(ps.x, n));
    write_file_atomic(dir / ("pushforward_" + std::to_string(i + 1) + ".csv"), samples_csv(ps.y, n));
  }
  if (s.ground_truth) {
    Sampler gt(GaussianSource(*s.ground_truth), c.seed, eval_stream::reference + 200);
    write_file_atomic(dir / "ground_truth.csv", samples_csv(gt.sample(rows), n));
  }
}

struct RunOptions {
  bool resume = false;            // continue from <output_dir>/checkpoint when present
  std::ostream* log = nullptr;    // progress lines, if set
  std::size_t log_every = 100;
  bool write_samples = true;
};

struct RunOutcome {
  int exit_code = 0;  // 0 complete, 2 diverged
  nlohmann::json metrics;
  std::optional<TrainState> state;
};

inline RunOutcome run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  const std::uint64_t hash = config_hash(c);
  write_file_atomic(out / "config.json", config_to_json(c).dump(2) + "\n");

  const ExperimentSetup setup = build_setup(c);
  const std::size_t k = setup.problem.size();

  TrainState st;
  if (opt.resume && fs::exists(out / "checkpoint" / "manifest.json")) {
    st = load_checkpoint(out / "checkpoint", hash);
    if (opt.log) *opt.log << "resuming " << c.experiment << " at epoch " << st.epoch << '\n';
  } else {
    st = init_state(setup.problem, c.train);
  }

  auto write_history = [&] {
    write_file_atomic(out / "history.csv", history_csv(st.history, k));
    write_file_atomic(out / "timing.csv", timing_csv(st.history));
  };
  json base = {{"schema", kMetricsSchema}, {"experiment", c.experiment}, {"config_hash", hash_hex(hash)},
               {"seed", c.seed}, {"K", k}, {"dim", c.dim}};

  RunOutcome outcome;
  try {
    train_until(st, setup.problem, c.train, [&](const TrainState& s) {
      const auto& rec = s.history.back();
      if (opt.log && opt.log_every > 0 && rec.epoch % opt.log_every == 0) {
        *opt.log << c.experiment << " epoch " << rec.epoch << " V_f " << rec.v_f << " V_T";
        for (double v : rec.v_t) *opt.log << ' ' << v;
        *opt.log << '\n';
      }
      if (c.checkpoint_every > 0 && rec.epoch % c.checkpoint_every == 0) {
        save_checkpoint(s, out / "checkpoint", hash);
        write_history();
      }
    });
  } catch (const DivergenceError& e) {
    write_history();
    json m = base;
    m["status"] = "diverged";
    m["error"] = e.what();
    m["epochs_completed"] = st.epoch;
    write_file_atomic(out / "metrics.json", m.dump(2) + "\n");
    outcome.exit_code = 2;
    outcome.metrics = m;
    return outcome;
  }
  write_history();
  save_checkpoint(st, out / "checkpoint", hash);

  json m = base;
  m["status"] = "complete";
  m["epochs_completed"] = st.epoch;
  if (!st.history.empty()) m["final"] = {{"v_f", st.history.back().v_f}, {"v_t", st.history.back().v_t}};
  m["metrics"] = evaluate(c, setup, st);
  write_file_atomic(out / "metrics.json", m.dump(2) + "\n");
  if (opt.write_samples) write_samples(c, setup, st, out / "samples");
  outcome.metrics = std::move(m);
  outcome.state = std::move(st);
  return outcome;
}

}  // namespace notbary
