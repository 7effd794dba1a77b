// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// notbary run <config.json>... [--out DIR] [--seed N] [--jobs J] [--resume]
// notbary eval <checkpoint> <config.json>
// notbary oracle gaussian <instance.json>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "notbary/checkpoint.hpp"
#include "notbary/config.hpp"
#include "notbary/experiment.hpp"
#include "notbary/gaussian_oracle.hpp"

namespace {

using nlohmann::json;
using namespace notbary;

constexpr int kExitError = 1;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

GaussianDist gaussian_from_json(const json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
  const auto d = static_cast<Eigen::Index>(mean.size());
  GaussianDist g{Eigen::VectorXd(d), Eigen::MatrixXd(d, d)};
  if (cov.size() != mean.size()) throw ConfigError("instance: covariance must be " + std::to_string(d) + "x" + std::to_string(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    g.mean[i] = mean[static_cast<std::size_t>(i)];
    if (cov[static_cast<std::size_t>(i)].size() != mean.size())
      throw ConfigError("instance: covariance must be " + std::to_string(d) + "x" + std::to_string(d));
    for (Eigen::Index c = 0; c < d; ++c) g.cov(i, c) = cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return g;
}

// Instance file: {"inputs": [{"mean": [...], "cov": [[...]]}, ...], "weights": [...]}
// or {"generate": {"dim": D, "K": K, "seed": s}, "weights": [...]}.
int cmd_oracle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open instance file " + path);
  const json j = json::parse(in);
  std::vector<GaussianDist> inputs;
  if (j.contains("generate")) {
    const auto& g = j.at("generate");
    inputs = random_gaussian_instance(g.at("dim").get<std::size_t>(), g.at("K").get<std::size_t>(),
                                      g.value("seed", std::uint64_t{0}));
  } else {
    for (const auto& e : j.at("inputs")) inputs.push_back(gaussian_from_json(e));
  }
  std::vector<double> weights;
  if (j.contains("weights")) weights = j.at("weights").get<std::vector<double>>();
  else weights.assign(inputs.size(), 1.0 / static_cast<double>(inputs.size()));

  const auto fp = fixed_point_barycenter(inputs, weights);
  json maps = json::array();
  for (const auto& p : inputs) {
    const auto t = gaussian_monge_map(p, fp.barycenter);
    maps.push_back({{"matrix", matrix_json(t.matrix)},
                    {"offset", vector_json(t.offset)},
                    {"cost", half_convention(bures_wasserstein_sq(p, fp.barycenter))}});
  }
  json out = {{"barycenter", {{"mean", vector_json(fp.barycenter.mean)}, {"cov", matrix_json(fp.barycenter.cov)}}},
              {"iterations", fp.iterations},
              {"residual", fp.residual},
              {"weights", weights},
              {"maps", maps}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path) {
  const auto cfg = parse_config(config_path);
  const auto st = load_checkpoint(checkpoint, config_hash(cfg));
  const auto setup = build_setup(cfg);
  json out = {{"schema", kMetricsSchema}, {"experiment", cfg.experiment}, {"config_hash", hash_hex(config_hash(cfg))},
              {"epochs_completed", st.epoch}, {"metrics", evaluate(cfg, setup, st)}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_one(const std::string& path, const std::optional<std::string>& out, const std::optional<std::uint64_t>& seed,
            bool resume, std::size_t n_configs) {
  auto user = [&] {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return json::parse(in);
  }();
  if (seed) user["seed"] = *seed;
  auto cfg = config_from_json(user);
  if (out) {
    // Several configs share --out as a parent directory.
    const auto stem = std::filesystem::path(path).stem().string();
    cfg.output_dir = n_configs > 1 ? (std::filesystem::path(*out) / stem).string() : *out;
  }
  RunOptions opt;
  opt.resume = resume;
  opt.log = &std::cerr;
  const auto r = run_experiment(cfg, opt);
  if (r.exit_code != 0) {
    std::cerr << path << ": " << r.metrics.value("error", std::string("run failed")) << '\n';
  } else {
    std::cerr << path << ": wrote " << cfg.output_dir << '\n';
  }
  return r.exit_code;
}

/// Runs each config in its own child process, at most `jobs` at a time.
int cmd_run(const std::vector<std::string>& configs, const std::optional<std::string>& out,
            const std::optional<std::uint64_t>& seed, std::size_t jobs, bool resume) {
  auto guarded = [&](const std::string& path) {
    try {
      return run_one(path, out, seed, resume, configs.size());
    } catch (const std::exception& e) {
      std::cerr << path << ": error: " << e.what() << '\n';
      return kExitError;
    }
  };
  if (jobs <= 1 || configs.size() == 1) {
    int worst = 0;
    for (const auto& p : configs) worst = std::max(worst, guarded(p));
    return worst;
  }
  int worst = 0;
  std::size_t running = 0;
  auto reap = [&] {
    int status = 0;
    if (::wait(&status) > 0) {
      --running;
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitError;
      worst = std::max(worst, code);
    }
  };
  for (const auto& p : configs) {
    while (running >= jobs) reap();
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = ::fork();
    if (pid < 0) {
      std::cerr << "fork failed; running " << p << " in process\n";
      worst = std::max(worst, guarded(p));
      continue;
    }
    if (pid == 0) std::_Exit(guarded(p));
    ++running;
  }
  while (running > 0) reap();
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  notbary::tune_heap();
  if (const char* t = std::getenv("NOTBARY_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"notbary: neural optimal transport barycenters"};
  app.require_subcommand(1);

  std::vector<std::string> configs;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool resume = false;
  auto* run = app.add_subcommand("run", "train and evaluate one or more experiment configs");
  run->add_option("configs", configs, "config JSON files")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory (parent directory when several configs are given)");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--jobs,-j", jobs, "number of configs to run in parallel processes")->check(CLI::PositiveNumber);
  run->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

  std::string checkpoint, eval_config;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("config", eval_config, "config JSON the checkpoint was trained with")->required()->check(CLI::ExistingFile);

  std::string instance;
  auto* oracle = app.add_subcommand("oracle", "closed-form ground truth");
  oracle->require_subcommand(1);
  auto* gaussian = oracle->add_subcommand("gaussian", "fixed-point barycenter and Monge maps of Gaussians");
  gaussian->add_option("instance", instance, "instance JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(configs, out, seed, jobs, resume);
    if (*eval) return cmd_eval(checkpoint, eval_config);
    if (*gaussian) return cmd_oracle(instance);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
