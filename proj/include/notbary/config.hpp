// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration. A config file names an experiment preset and
// overrides any subset of its fields; the preset supplies the rest. Every
// object is parsed strictly, so a misspelled key is an error rather than a
// silently ignored setting.

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "notbary/errors.hpp"
#include "notbary/mlp.hpp"
#include "notbary/solver.hpp"
#include "notbary/transport.hpp"

namespace notbary {

using json = nlohmann::json;

inline constexpr const char* kExperimentTwister = "twister";
inline constexpr const char* kExperimentGaussian = "gaussian-benchmark";
inline constexpr const char* kExperimentDirac = "dirac-sanity";

struct CostConfig {
  std::string family = "classical";  // classical | kl | energy
  double epsilon = 1.0;
  double gamma = 1.0;
  double alpha = 1.0;              // energy semimetric exponent
  std::vector<double> prior_mean;  // empty means the origin
  double prior_var = 1.0;          // isotropic prior variance

  friend bool operator==(const CostConfig&, const CostConfig&) = default;
};

struct TwisterConfig {
  double radius = 3.0;
  double sigma = 0.5;
  double kappa = 1.0;

  friend bool operator==(const TwisterConfig&, const TwisterConfig&) = default;
};

struct EvalConfig {
  std::size_t n = 4096;            // evaluation inputs per k
  std::size_t m = 64;              // noise draws for conditional means
  std::size_t delta1_steps = 0;    // 0 skips the duality-gap diagnostic

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::size_t dim = 2;
  std::size_t k = 3;
  std::vector<double> weights;
  CostConfig cost;
  TwisterConfig twister;
  std::optional<std::uint64_t> instance_seed;  // gaussian-benchmark; defaults to seed
  std::vector<double> dirac_points;            // dirac-sanity, one per input
  PlanKind plan = PlanKind::deterministic;
  std::size_t noise_dim = 0;
  TrainConfig train;
  EvalConfig eval;
  std::size_t checkpoint_every = 0;
  std::size_t sample_rows = 8192;

  std::uint64_t effective_instance_seed() const { return instance_seed.value_or(seed); }
};

namespace detail {

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

/// Field reader that remembers which keys were consumed and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + (path_.empty() ? std::string("<root>") : path_) + "' must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("field '" + join_path(path_, key) + "' has the wrong type");
    }
  }

  void mark(const std::string& key) { seen_.insert(key); }

  StrictObject child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return StrictObject(has(key) ? j_.at(key) : empty, join_path(path_, key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join_path(path_, key) + "'");
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool cond, const std::string& field, const std::string& msg) {
  if (!cond) throw ConfigError("invalid '" + field + "': " + msg);
}

}  // namespace detail

/// Plan model implied by a cost family when the config leaves it open.
inline PlanKind default_plan(const std::string& family) {
  if (family == "kl") return PlanKind::gaussian;
  if (family == "energy") return PlanKind::stochastic;
  return PlanKind::deterministic;
}

/// Full default config for an experiment tag. The cost family matters only
/// for the energy cost, whose estimator needs several conditional samples per
/// input; its batch keeps 2^10 generated points per input distribution.
inline json preset_json(const std::string& experiment, const std::string& family = "classical") {
  json train = {{"batch_size", 1024},     {"inner_steps", 3},  {"cond_batch", 1},
                {"prior_batch", 1},       {"lr_potential", 1e-3}, {"lr_map", 1e-3},
                {"adam_beta1", 0.9},      {"adam_beta2", 0.999},
                {"epochs", 1200},         {"map_hidden", {128, 128, 128}},
                {"potential_hidden", {128, 128, 128}}, {"map_activation", "relu"},
                {"potential_activation", "relu"}};
  if (family == "energy") {
    train["batch_size"] = 256;
    train["cond_batch"] = 4;
    train["prior_batch"] = 4;
  }
  json j = {{"experiment", experiment},
            {"seed", 0},
            {"output_dir", "runs/" + experiment},
            {"cost", {{"family", family}, {"epsilon", 1.0}, {"gamma", 1.0}, {"alpha", 1.0},
                      {"prior_mean", json::array()}, {"prior_var", 1.0}}},
            {"plan", to_string(default_plan(family))},
            {"noise_dim", 0},
            {"train", train},
            {"eval", {{"n", 4096}, {"m", 64}, {"delta1_steps", 0}}},
            {"checkpoint_every", 0},
            {"sample_rows", 8192}};
  if (experiment == kExperimentTwister) {
    j["dim"] = 2;
    j["K"] = 3;
    j["weights"] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    j["twister"] = {{"radius", 3.0}, {"sigma", 0.5}, {"kappa", 1.0}};
    j["cost"]["prior_mean"] = {5.0, 5.0};
    // Momentum lets the potentials and maps chase each other around the
    // twisted cost's curved level sets; without it the game settles.
    j["train"]["adam_beta1"] = 0.0;
  } else if (experiment == kExperimentGaussian) {
    j["dim"] = 2;
    j["K"] = 3;
    j["weights"] = {0.25, 0.25, 0.5};
    j["instance_seed"] = nullptr;
  } else if (experiment == kExperimentDirac) {
    // Identical points fill every batch, so small batches and networks lose
    // nothing and keep the run short.
    j["dim"] = 1;
    j["K"] = 2;
    j["weights"] = {0.5, 0.5};
    j["dirac_points"] = {-1.0, 1.0};
    j["train"]["batch_size"] = 64;
    j["train"]["epochs"] = 2000;
    j["train"]["map_hidden"] = {32, 32};
    j["train"]["potential_hidden"] = {32, 32};
  } else {
    throw ConfigError("unknown experiment '" + experiment + "' (expected twister, gaussian-benchmark or dirac-sanity)");
  }
  return j;
}

inline void validate(const ExperimentConfig& c) {
  using detail::check;
  check(c.dim >= 1, "dim", "must be at least 1");
  check(c.k >= 2, "K", "need at least two input distributions");
  check(c.weights.size() == c.k, "weights", "must have K = " + std::to_string(c.k) + " entries");
  double s = 0.0;
  for (double w : c.weights) {
    check(std::isfinite(w) && w > 0.0, "weights", "must be positive");
    s += w;
  }
  check(std::abs(s - 1.0) <= 1e-9, "weights", "weights must sum to 1");

  const auto& cost = c.cost;
  check(cost.family == "classical" || cost.family == "kl" || cost.family == "energy", "cost.family",
        "expected classical, kl or energy");
  check(std::isfinite(cost.epsilon) && cost.epsilon > 0.0, "cost.epsilon", "must be positive");
  check(std::isfinite(cost.gamma) && cost.gamma > 0.0, "cost.gamma", "must be positive");
  check(cost.alpha >= 1.0 && cost.alpha <= 2.0, "cost.alpha", "must lie in [1, 2]");
  check(cost.prior_mean.empty() || cost.prior_mean.size() == c.dim, "cost.prior_mean", "must have dim entries");
  check(std::isfinite(cost.prior_var) && cost.prior_var > 0.0, "cost.prior_var", "must be positive");
  if (cost.family == "kl") check(c.plan == PlanKind::gaussian, "plan", "the kl cost needs the gaussian plan model");
  if (cost.family == "energy")
    check(c.plan != PlanKind::deterministic, "plan", "the energy cost needs a stochastic or gaussian plan");
  if (cost.family == "energy" && c.plan != PlanKind::deterministic)
    check(c.train.cond_batch >= 2, "train.cond_batch", "the energy estimator needs at least 2 conditional samples");

  if (c.experiment == kExperimentTwister) {
    check(c.dim == 2, "dim", "the twister experiment is planar");
    check(c.k == 3, "K", "the twister experiment has three inputs");
    check(c.twister.radius > 0.0, "twister.radius", "must be positive");
    check(c.twister.sigma > 0.0, "twister.sigma", "must be positive");
    check(std::isfinite(c.twister.kappa), "twister.kappa", "must be finite");
  } else if (c.experiment == kExperimentDirac) {
    check(c.dim == 1, "dim", "the dirac experiment is one-dimensional");
    check(c.dirac_points.size() == c.k, "dirac_points", "must have K entries");
  }
  check(c.train.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(c.train.inner_steps >= 1, "train.inner_steps", "must be at least 1");
  check(c.train.cond_batch >= 1, "train.cond_batch", "must be at least 1");
  check(c.train.prior_batch >= 1, "train.prior_batch", "must be at least 1");
  check(c.train.lr_potential > 0.0, "train.lr_potential", "must be positive");
  check(c.train.lr_map > 0.0, "train.lr_map", "must be positive");
  check(c.train.adam_beta1 >= 0.0 && c.train.adam_beta1 < 1.0, "train.adam_beta1", "must lie in [0, 1)");
  check(c.train.adam_beta2 >= 0.0 && c.train.adam_beta2 < 1.0, "train.adam_beta2", "must lie in [0, 1)");
  check(!c.train.map_hidden.empty(), "train.map_hidden", "need at least one hidden layer");
  check(!c.train.potential_hidden.empty(), "train.potential_hidden", "need at least one hidden layer");
  for (auto w : c.train.map_hidden) check(w >= 1, "train.map_hidden", "widths must be positive");
  for (auto w : c.train.potential_hidden) check(w >= 1, "train.potential_hidden", "widths must be positive");
  check(c.eval.n >= 2, "eval.n", "must be at least 2");
  check(c.eval.m >= 1, "eval.m", "must be at least 1");
  check(c.sample_rows >= 1, "sample_rows", "must be at least 1");
}

/// Parses a config object: the experiment tag selects a preset, the object's
/// fields override it, and the result is validated.
inline ExperimentConfig config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  if (!user.contains("experiment") || !user.at("experiment").is_string())
    throw ConfigError("missing string field 'experiment'");
  const auto tag = user.at("experiment").get<std::string>();
  std::string family = "classical";
  if (user.contains("cost") && user.at("cost").is_object() && user.at("cost").contains("family") &&
      user.at("cost").at("family").is_string())
    family = user.at("cost").at("family").get<std::string>();
  if (family != "classical" && family != "kl" && family != "energy")
    throw ConfigError("invalid 'cost.family': expected classical, kl or energy");

  json merged = preset_json(tag, family);
  merged.merge_patch(user);

  ExperimentConfig c;
  detail::StrictObject root(merged, "");
  root.read("experiment", c.experiment);
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  root.read("dim", c.dim);
  root.read("K", c.k);
  root.read("weights", c.weights);
  {
    auto o = root.child("cost");
    o.read("family", c.cost.family);
    o.read("epsilon", c.cost.epsilon);
    o.read("gamma", c.cost.gamma);
    o.read("alpha", c.cost.alpha);
    o.read("prior_mean", c.cost.prior_mean);
    o.read("prior_var", c.cost.prior_var);
    o.finish();
  }
  if (tag == kExperimentTwister) {
    auto o = root.child("twister");
    o.read("radius", c.twister.radius);
    o.read("sigma", c.twister.sigma);
    o.read("kappa", c.twister.kappa);
    o.finish();
  }
  if (tag == kExperimentGaussian) {
    root.mark("instance_seed");
    if (root.has("instance_seed")) {
      std::uint64_t v = 0;
      root.read("instance_seed", v);
      c.instance_seed = v;
    }
  }
  if (tag == kExperimentDirac) root.read("dirac_points", c.dirac_points);
  {
    std::string plan;
    root.read("plan", plan);
    try {
      c.plan = plan_kind_from_string(plan);
    } catch (const ContractViolation&) {
      throw ConfigError("invalid 'plan': expected deterministic, stochastic or gaussian");
    }
  }
  root.read("noise_dim", c.noise_dim);
  {
    auto o = root.child("train");
    auto& t = c.train;
    o.read("batch_size", t.batch_size);
    o.read("inner_steps", t.inner_steps);
    o.read("cond_batch", t.cond_batch);
    o.read("prior_batch", t.prior_batch);
    o.read("lr_potential", t.lr_potential);
    o.read("lr_map", t.lr_map);
    o.read("adam_beta1", t.adam_beta1);
    o.read("adam_beta2", t.adam_beta2);
    o.read("epochs", t.epochs);
    o.read("map_hidden", t.map_hidden);
    o.read("potential_hidden", t.potential_hidden);
    std::string ma, pa;
    o.read("map_activation", ma);
    o.read("potential_activation", pa);
    o.finish();
    try {
      t.map_activation = activation_from_string(ma);
      t.potential_activation = activation_from_string(pa);
    } catch (const ContractViolation& e) {
      throw ConfigError(std::string("invalid 'train' activation: ") + e.what());
    }
  }
  {
    auto o = root.child("eval");
    o.read("n", c.eval.n);
    o.read("m", c.eval.m);
    o.read("delta1_steps", c.eval.delta1_steps);
    o.finish();
  }
  root.read("checkpoint_every", c.checkpoint_every);
  root.read("sample_rows", c.sample_rows);
  root.finish();
  c.train.seed = c.seed;
  validate(c);
  return c;
}

/// The effective config with every default spelled out. Parsing the result
/// yields the same config.
inline json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  json j = {{"experiment", c.experiment},
            {"seed", c.seed},
            {"output_dir", c.output_dir},
            {"dim", c.dim},
            {"K", c.k},
            {"weights", c.weights},
            {"cost", {{"family", c.cost.family}, {"epsilon", c.cost.epsilon}, {"gamma", c.cost.gamma},
                      {"alpha", c.cost.alpha}, {"prior_mean", c.cost.prior_mean}, {"prior_var", c.cost.prior_var}}},
            {"plan", to_string(c.plan)},
            {"noise_dim", c.noise_dim},
            {"train", {{"batch_size", t.batch_size}, {"inner_steps", t.inner_steps}, {"cond_batch", t.cond_batch},
                       {"prior_batch", t.prior_batch}, {"lr_potential", t.lr_potential}, {"lr_map", t.lr_map},
                       {"adam_beta1", t.adam_beta1}, {"adam_beta2", t.adam_beta2},
                       {"epochs", t.epochs}, {"map_hidden", t.map_hidden}, {"potential_hidden", t.potential_hidden},
                       {"map_activation", to_string(t.map_activation)},
                       {"potential_activation", to_string(t.potential_activation)}}},
            {"eval", {{"n", c.eval.n}, {"m", c.eval.m}, {"delta1_steps", c.eval.delta1_steps}}},
            {"checkpoint_every", c.checkpoint_every},
            {"sample_rows", c.sample_rows}};
  if (c.experiment == kExperimentTwister)
    j["twister"] = {{"radius", c.twister.radius}, {"sigma", c.twister.sigma}, {"kappa", c.twister.kappa}};
  if (c.experiment == kExperimentGaussian)
    j["instance_seed"] = c.instance_seed ? json(*c.instance_seed) : json(nullptr);
  if (c.experiment == kExperimentDirac) j["dirac_points"] = c.dirac_points;
  return j;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of the fields that define the training
/// trajectory. The output location, epoch budget, checkpoint interval and
/// evaluation settings are left out so a run can be resumed with a larger
/// budget or evaluated differently.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("output_dir");
  j.erase("checkpoint_every");
  j.erase("eval");
  j.erase("sample_rows");
  j["train"].erase("epochs");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

}  // namespace notbary
