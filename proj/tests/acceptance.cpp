// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit status is nonzero when any selected criterion fails.
//
//   notbary_acceptance [criteria...] [--work DIR]
//
// With no criteria, all nine run. Criteria 1 to 3 train full-size models and
// take from minutes to hours on one core.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "notbary/checkpoint.hpp"
#include "notbary/config.hpp"
#include "notbary/experiment.hpp"
#include "notbary/gaussian_oracle.hpp"

namespace {

using namespace notbary;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double minutes_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path g_work;

/// Trains one config into <work>/<name>, logging progress to stderr.
json run(json user, const std::string& name) {
  user["output_dir"] = (g_work / name).string();
  const auto cfg = config_from_json(user);
  fs::remove_all(cfg.output_dir);
  RunOptions opt;
  opt.log = &std::cerr;
  opt.log_every = 200;
  const auto t0 = Clock::now();
  const auto r = run_experiment(cfg, opt);
  std::cerr << name << ": " << r.metrics.value("status", std::string("?")) << " in "
            << fmt("%.1f", minutes_since(t0)) << " min\n";
  if (r.exit_code != 0) throw std::runtime_error(name + ": " + r.metrics.value("error", std::string("run failed")));
  return r.metrics;
}

// ---- 1: Gaussian benchmark ------------------------------------------------------------

Verdict gaussian_benchmark() {
  const std::map<std::size_t, double> bound{{2, 0.5}, {4, 1.0}, {8, 2.0}, {16, 2.0}};
  Verdict v{true, ""};
  for (const auto& [d, limit] : bound) {
    const auto t0 = Clock::now();
    double avg = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const json m = run({{"experiment", "gaussian-benchmark"}, {"dim", d}, {"seed", seed}},
                         "gaussian_d" + std::to_string(d) + "_s" + std::to_string(seed));
      const double uvp = m.at("metrics").at("l2_uvp_weighted").get<double>();
      avg += uvp / 3.0;
      per_seed += (per_seed.empty() ? "" : "/") + fmt("%.3f", uvp);
    }
    const bool ok = avg <= limit;
    v.pass = v.pass && ok;
    v.detail += (v.detail.empty() ? "" : "; ") + ("D=" + std::to_string(d) + " " + fmt("%.3f%%", avg) +
                                                   (ok ? " <= " : " > ") + fmt("%.1f%%", limit) + " [" + per_seed +
                                                   "] " + fmt("%.0f min", minutes_since(t0)));
  }
  return v;
}

// ---- 2, 3: twister ----------------------------------------------------------------------

json twister(const std::string& family, const std::string& name) {
  json user = {{"experiment", "twister"}, {"seed", 0}};
  if (family != "classical") user["cost"] = {{"family", family}, {"prior_mean", {5.0, 5.0}}, {"prior_var", 1.0}};
  if (family == "kl") user["cost"]["epsilon"] = 1.0;
  if (family == "energy") user["cost"]["gamma"] = 1.0;
  return run(user, name).at("metrics").at("energy_test");
}

Verdict twister_unregularized() {
  const double sigma = TwisterConfig{}.sigma;
  const auto t0 = Clock::now();
  const json et = twister("classical", "twister");
  const double minutes = minutes_since(t0);
  const double stat = et.at("statistic").get<double>();
  const double norm = et.at("pooled_mean_norm").get<double>();
  const bool ok = stat <= 0.05 * sigma && norm <= 0.1 * sigma && minutes <= 10.0;
  return {ok, "energy statistic " + fmt("%.4f", stat) + " (limit " + fmt("%.3f", 0.05 * sigma) + "), mean norm " +
                  fmt("%.4f", norm) + " (limit " + fmt("%.3f", 0.1 * sigma) + "), " + fmt("%.1f", minutes) +
                  " min (limit 10)"};
}

Verdict twister_regularized() {
  const double base = twister("classical", "twister_base").at("prior_projection").get<double>();
  Verdict v{true, "unregularized projection " + fmt("%.3f", base)};
  for (const char* family : {"kl", "energy"}) {
    const double p = twister(family, std::string("twister_") + family).at("prior_projection").get<double>();
    const bool ok = p > 0.0 && p >= base + 0.5;
    v.pass = v.pass && ok;
    v.detail += std::string("; ") + family + " " + fmt("%.3f", p) + (ok ? " ok" : " too small");
  }
  return v;
}

// ---- 4: Dirac pair ------------------------------------------------------------------------

Verdict dirac_pair() {
  const auto t0 = Clock::now();
  const json m = run({{"experiment", "dirac-sanity"}, {"seed", 0}}, "dirac").at("metrics");
  const double minutes = minutes_since(t0);
  const double dev = m.at("max_deviation").get<double>();
  return {dev <= 0.05 && minutes <= 1.0,
          "outputs " + m.at("map_outputs").dump() + ", max deviation " + fmt("%.4f", dev) + " (limit 0.05), " +
              fmt("%.1f", minutes * 60.0) + " s"};
}

// ---- 5: oracle suite ------------------------------------------------------------------------

Eigen::MatrixXd random_spd(CounterRng& rng, Eigen::Index d) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::MatrixXd s = a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

Verdict oracle_suite() {
  CounterRng rng(5, 0);
  auto g1 = [](double var) { return GaussianDist{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, var)}; };

  double err_1d = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s, w;
    std::vector<GaussianDist> in;
    double wsum = 0.0;
    for (int k = 0; k < 3; ++k) {
      s.push_back(0.2 + 3.0 * rng.uniform());
      w.push_back(0.1 + rng.uniform());
      wsum += w.back();
      in.push_back(g1(s.back() * s.back()));
    }
    double expect = 0.0;
    for (int k = 0; k < 3; ++k) expect += w[k] / wsum * s[k];
    for (double& x : w) x /= wsum;
    const auto b = fixed_point_barycenter(in, w);
    err_1d = std::max(err_1d, std::abs(std::sqrt(b.barycenter.cov(0, 0)) - expect));
  }

  double err_diag = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index d = 4;
    Eigen::MatrixXd sd(3, d);
    std::vector<GaussianDist> in;
    for (int k = 0; k < 3; ++k) {
      for (Eigen::Index i = 0; i < d; ++i) sd(k, i) = 0.2 + 3.0 * rng.uniform();
      in.push_back({Eigen::VectorXd::Zero(d), sd.row(k).array().square().matrix().asDiagonal().toDenseMatrix()});
    }
    const std::vector<double> w{0.25, 0.25, 0.5};
    const auto b = fixed_point_barycenter(in, w);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double expect = 0.25 * sd(0, i) + 0.25 * sd(1, i) + 0.5 * sd(2, i);
      err_diag = std::max(err_diag, std::abs(std::sqrt(b.barycenter.cov(i, i)) - expect));
    }
  }

  double sqrtm_ratio = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd a = random_spd(rng, 1 + static_cast<Eigen::Index>(rng.below(32)));
    const Eigen::MatrixXd r = sqrtm_psd(a);
    sqrtm_ratio = std::max(sqrtm_ratio, (r * r - a).norm() / a.norm());
  }

  double fixed_point = 0.0;
  for (std::size_t d : {2u, 4u, 8u, 16u, 64u}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto inputs = random_gaussian_instance(d, 3, seed);
      const std::vector<double> w{0.25, 0.25, 0.5};
      const auto r = fixed_point_barycenter(inputs, w);
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      for (std::size_t k = 0; k < 3; ++k) acc += w[k] * gaussian_monge_map(r.barycenter, inputs[k]).matrix;
      fixed_point = std::max(fixed_point, (acc - Eigen::MatrixXd::Identity(acc.rows(), acc.cols())).norm());
    }
  }
  const bool ok = err_1d <= 1e-8 && err_diag <= 1e-8 && sqrtm_ratio <= 1e-10 && fixed_point <= 1e-6;
  return {ok, "1-D " + fmt("%.1e", err_1d) + ", diagonal " + fmt("%.1e", err_diag) + " (limit 1e-8); sqrtm " +
                  fmt("%.1e", sqrtm_ratio) + " (limit 1e-10); self-consistency " + fmt("%.1e", fixed_point) +
                  " (limit 1e-6)"};
}

// ---- 6: differentiation ------------------------------------------------------------------

/// One random composition: potentials, plan model and weak cost drawn at
/// random, with V_f and sum_k l_k V_T[k] evaluated on fixed batches. Returns the largest
/// deviation between backward() and central differences over all parameters,
/// relative to the largest finite-difference entry.
double composition_error(CounterRng& rng) {
  const std::size_t k = 2 + rng.below(2);
  const bool twisted = rng.below(3) == 0;
  const std::size_t d = twisted ? 2 : 1 + rng.below(3);
  const int family = static_cast<int>(rng.below(3));  // classical, kl, energy
  PlanKind plan = PlanKind::deterministic;
  if (family == 1) plan = PlanKind::gaussian;
  else if (family == 2) plan = rng.below(2) ? PlanKind::stochastic : PlanKind::gaussian;
  else plan = static_cast<PlanKind>(rng.below(3));
  const Activation act = rng.below(2) ? Activation::relu : Activation::softplus;

  BarycenterProblem problem;
  problem.dim = d;
  problem.plan = plan;
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    problem.weights.push_back(0.2 + rng.uniform());
    wsum += problem.weights.back();
  }
  for (double& w : problem.weights) w /= wsum;
  Eigen::VectorXd pm(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < pm.size(); ++i) pm[i] = rng.normal();
  const GaussianDist prior = GaussianDist::isotropic(pm, 0.5 + rng.uniform());
  for (std::size_t i = 0; i < k; ++i) {
    problem.inputs.emplace_back(GaussianSource(GaussianDist::standard(d)));
    const GroundCost ground = twisted ? GroundCost(Twisted{0.5 + rng.uniform()}) : GroundCost(SqEuclidean{});
    if (family == 1) problem.costs.emplace_back(KlCost{ground, 0.1 + rng.uniform(), prior});
    else if (family == 2)
      problem.costs.emplace_back(EnergyCost{ground, 0.1 + rng.uniform(), Semimetric{1.0 + rng.uniform()},
                                            GaussianSource(prior)});
    else problem.costs.emplace_back(ClassicalCost{ground});
  }

  TrainConfig cfg;
  cfg.batch_size = 2 + rng.below(4);
  cfg.cond_batch = 2 + rng.below(2);
  cfg.prior_batch = 1 + rng.below(3);
  cfg.map_hidden = {1 + rng.below(8), 1 + rng.below(8)};
  cfg.potential_hidden = {1 + rng.below(8)};
  cfg.map_activation = act;
  cfg.potential_activation = act;
  cfg.seed = rng.next_u64();
  TrainState st = init_state(problem, cfg);
  const Batches b = draw_batches(problem, cfg, st.streams, true);

  // V_f treats the maps as constants by design, so it is checked against the
  // potential parameters only; the map objective against all of them.
  const std::size_t n_pot = st.potentials.tensors().size();
  auto objective = [&](bool potential_side, const BankBinding& bank, const std::vector<PlanBinding>& maps,
                       const TrainState& s) {
    if (potential_side) return estimate_Vf(bank, s.maps, problem, b);
    ad::Var total;
    for (std::size_t i = 0; i < k; ++i) {
      const ad::Var term = problem.weights[i] * estimate_Vt(bank, maps[i], problem, i, b);
      total = total.valid() ? total + term : term;
    }
    return total;
  };

  double diff = 0.0, ref = 1e-8;
  for (bool potential_side : {true, false}) {
    const BankBinding bank(st.potentials, true);
    std::vector<PlanBinding> maps;
    for (const auto& m : st.maps) maps.emplace_back(m, !potential_side);
    ad::backward(objective(potential_side, bank, maps, st));
    std::vector<Tensor> grads = bank.grads();
    if (!potential_side)
      for (const auto& m : maps)
        for (auto& g : m.grads()) grads.push_back(std::move(g));

    for (std::size_t t = 0; t < grads.size(); ++t) {
      auto locate = [&](TrainState& s) -> Tensor& {
        if (t < n_pot) return *s.potentials.tensors()[t];
        return *s.map_tensors()[t - n_pot];
      };
      const Tensor fd = ad::finite_diff_grad([&](const Tensor& probe) {
        TrainState copy = st;
        locate(copy) = probe;
        std::vector<PlanBinding> frozen;
        for (const auto& m : copy.maps) frozen.emplace_back(m, false);
        return objective(potential_side, BankBinding(copy.potentials, false), frozen, copy).item();
      }, locate(st), 1e-5);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        diff = std::max(diff, std::abs(grads[t][i] - fd[i]));
        ref = std::max(ref, std::abs(fd[i]));
      }
    }
  }
  if (std::getenv("NOTBARY_DEBUG") && diff / ref > 1e-4)
    std::cerr << "k=" << k << " d=" << d << " twisted=" << twisted << " family=" << family
              << " plan=" << to_string(plan) << " act=" << to_string(act) << " err=" << diff / ref << '\n';
  return diff / ref;
}

Verdict differentiation() {
  CounterRng rng(6, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, composition_error(rng));
  return {worst <= 1e-4, "worst relative error " + fmt("%.2e", worst) + " over 100 compositions (limit 1e-4)"};
}

// ---- 7: congruence -------------------------------------------------------------------------

Verdict congruence() {
  CounterRng rng(7, 0);
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const std::size_t k = 2 + rng.below(4), d = 1 + rng.below(4);
    std::vector<double> w;
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      w.push_back(0.1 + rng.uniform());
      s += w.back();
    }
    for (double& x : w) x /= s;
    const PotentialBank bank = make_potential_bank(d, w, {32, 32}, draw % 2 ? Activation::relu : Activation::softplus, rng);
    Tensor y = Tensor::matrix(10000, d);
    for (double& v : y.data()) v = 3.0 * rng.normal();
    const auto fs = BankBinding(bank, false).all(ad::constant(y));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += w[i] * fs[i].value()[r];
      worst = std::max(worst, std::abs(acc));
    }
  }
  return {worst <= 1e-12, "max |sum l_k f_k(y)| = " + fmt("%.2e", worst) + " over 10^4 points x 20 draws (limit 1e-12)"};
}

// ---- 8: energy estimator ------------------------------------------------------------------

Verdict energy_unbiased() {
  const Tensor support = Tensor::matrix({{0.0, 0.0}, {1.0, 0.5}, {-1.0, 2.0}, {0.3, -1.2}, {2.0, 2.0}});
  const Tensor prior = Tensor::matrix({{0.5, 0.5}, {-0.5, 1.0}, {1.5, -0.5}});
  const Tensor x = Tensor::vector({0.2, 0.1});
  const double gamma = 1.0;
  const Semimetric ell{1.0};
  double base = 0.0, cross = 0.0, within = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    base += ground_cost(SqEuclidean{}, x.data(), support.row(i)) / 5.0;
    for (std::size_t j = 0; j < 3; ++j) cross += ell(support.row(i), prior.row(j)) / 15.0;
    for (std::size_t j = 0; j < 5; ++j) within += ell(support.row(i), support.row(j)) / 25.0;
  }
  const double exact = base + gamma * (2.0 * cross - within);

  CounterRng rng(8, 0);
  const std::size_t draws = 100000, m = 4, p = 2;
  double s1 = 0.0, s2 = 0.0;
  Tensor ys = Tensor::matrix(m, 2), y0 = Tensor::matrix(p, 2);
  for (std::size_t n = 0; n < draws; ++n) {
    for (std::size_t s = 0; s < m; ++s) {
      const auto r = support.row(rng.below(5));
      std::copy(r.begin(), r.end(), ys.row(s).begin());
    }
    for (std::size_t t = 0; t < p; ++t) {
      const auto r = prior.row(rng.below(3));
      std::copy(r.begin(), r.end(), y0.row(t).begin());
    }
    const double v = ad::estimate_energy_cost(SqEuclidean{}, x, ad::constant(ys), y0, gamma, ell).item();
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / draws;
  const double se = std::sqrt((s2 / draws - mean * mean) / (draws - 1));
  const double z = std::abs(mean - exact) / se;
  return {z <= 4.0, "mean " + fmt("%.5f", mean) + " vs exact " + fmt("%.5f", exact) + ", " + fmt("%.2f", z) +
                        " standard errors (limit 4)"};
}

// ---- 9: determinism and resume --------------------------------------------------------------

Verdict determinism() {
  Verdict v{true, ""};
  const json small = {{"batch_size", 128}, {"map_hidden", {32, 32}}, {"potential_hidden", {32, 32}}};
  for (const char* family : {"classical", "energy"}) {
    json user = {{"experiment", "twister"}, {"seed", 11}, {"train", small}, {"eval", {{"n", 256}, {"m", 4}}},
                 {"sample_rows", 64}, {"cost", {{"family", family}}}};
    user["train"]["epochs"] = 60;
    const std::string tag = std::string("determinism_") + family;
    run(user, tag + "_a");
    run(user, tag + "_b");
    json first = user;
    first["train"]["epochs"] = 25;
    first["checkpoint_every"] = 25;
    run(first, tag + "_split");
    // Resume continues from the checkpoint in the same directory.
    user["output_dir"] = (g_work / (tag + "_split")).string();
    RunOptions opt;
    opt.resume = true;
    run_experiment(config_from_json(user), opt);

    const fs::path a = g_work / (tag + "_a"), b = g_work / (tag + "_b"), c = g_work / (tag + "_split");
    const bool same = slurp(a / "history.csv") == slurp(b / "history.csv") &&
                      slurp(a / "checkpoint" / "params.bin") == slurp(b / "checkpoint" / "params.bin");
    const bool resumed = slurp(a / "history.csv") == slurp(c / "history.csv") &&
                         slurp(a / "checkpoint" / "params.bin") == slurp(c / "checkpoint" / "params.bin") &&
                         slurp(a / "metrics.json") == slurp(c / "metrics.json");
    v.pass = v.pass && same && resumed && !slurp(a / "history.csv").empty();
    v.detail += (v.detail.empty() ? "" : "; ") + std::string(family) + ": repeat " + (same ? "identical" : "DIFFERS") +
                ", resume " + (resumed ? "identical" : "DIFFERS");
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  notbary::tune_heap();
  CLI::App app{"notbary acceptance checks"};
  std::vector<int> selected;
  std::string work = (fs::temp_directory_path() / "notbary_acceptance").string();
  app.add_option("criteria", selected, "criterion numbers (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "directory for training outputs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  g_work = work;
  fs::create_directories(g_work);

  const std::map<int, std::pair<const char*, std::function<Verdict()>>> criteria{
      {1, {"gaussian benchmark L2-UVP", gaussian_benchmark}},
      {2, {"twister recovers the barycenter", twister_unregularized}},
      {3, {"regularized twister moves toward the prior", twister_regularized}},
      {4, {"dirac pair reaches the midpoint", dirac_pair}},
      {5, {"gaussian oracle suite", oracle_suite}},
      {6, {"gradients match finite differences", differentiation}},
      {7, {"potentials are congruent", congruence}},
      {8, {"energy cost estimator is unbiased", energy_unbiased}},
      {9, {"determinism and resume", determinism}},
  };

  int failures = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
