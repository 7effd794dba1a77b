// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// A checkpoint is a directory with two files:
//   manifest.json  config hash, epoch, network shapes, optimizer scalars,
//                  RNG stream positions and the training history
//   params.bin     little-endian float64 values in manifest order: potential
//                  networks, maps, then Adam moments (m, v) of the potential
//                  and map optimizers
// The blob is written before the manifest, so a manifest always describes a
// complete blob.

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "notbary/adam.hpp"
#include "notbary/config.hpp"
#include "notbary/errors.hpp"
#include "notbary/serialization.hpp"
#include "notbary/solver.hpp"
#include "notbary/transport.hpp"

namespace notbary {

inline constexpr const char* kCheckpointFormat = "notbary-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json adam_manifest(const AdamState& s) {
  return {{"lr", s.config.lr}, {"beta1", s.config.beta1}, {"beta2", s.config.beta2},
          {"eps", s.config.eps}, {"step", s.step}};
}

inline nlohmann::json streams_manifest(const std::vector<CounterRng>& rs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rs) out.push_back({r.key(), r.counter()});
  return out;
}

inline std::vector<CounterRng> streams_from(const nlohmann::json& j) {
  std::vector<CounterRng> out;
  for (const auto& e : j) out.push_back(CounterRng::restore(e.at(0).get<std::uint64_t>(), e.at(1).get<std::uint64_t>()));
  return out;
}

inline void append_adam(std::vector<char>& blob, const AdamState& s) {
  for (const auto& t : s.m) append_f64_le(blob, t.data());
  for (const auto& t : s.v) append_f64_le(blob, t.data());
}

}  // namespace detail

inline void save_checkpoint(const TrainState& st, const std::filesystem::path& dir, std::uint64_t config_hash) {
  using nlohmann::json;
  std::vector<char> blob;
  json potentials = json::array();
  for (const auto& net : st.potentials.nets) {
    potentials.push_back(mlp_manifest(net));
    append_params(blob, net);
  }
  json maps = json::array();
  for (const auto& m : st.maps) {
    json nets = json::array();
    for (const auto* net : networks(m)) {
      nets.push_back(mlp_manifest(*net));
      append_params(blob, *net);
    }
    maps.push_back({{"kind", to_string(kind_of(m))}, {"noise_dim", noise_dim(m)}, {"networks", nets}});
  }
  detail::append_adam(blob, st.potential_opt);
  detail::append_adam(blob, st.map_opt);

  json history = json::array();
  for (const auto& r : st.history) history.push_back({{"epoch", r.epoch}, {"v_f", r.v_f}, {"v_t", r.v_t}, {"wall_ms", r.wall_ms}});

  const json manifest = {{"format", kCheckpointFormat},
                         {"version", kCheckpointVersion},
                         {"config_hash", hash_hex(config_hash)},
                         {"epoch", st.epoch},
                         {"weights", st.potentials.weights},
                         {"potentials", potentials},
                         {"maps", maps},
                         {"optimizers", {{"potential", detail::adam_manifest(st.potential_opt)},
                                         {"map", detail::adam_manifest(st.map_opt)}}},
                         {"streams", {{"inputs", detail::streams_manifest(st.streams.inputs)},
                                      {"noise", detail::streams_manifest(st.streams.noise)},
                                      {"priors", detail::streams_manifest(st.streams.priors)}}},
                         {"blob_values", blob.size() / 8},
                         {"history", history}};
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "params.bin", blob);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a checkpoint. With `expected_hash`, refuses a checkpoint written for
/// a different configuration.
inline TrainState load_checkpoint(const std::filesystem::path& dir,
                                  std::optional<std::uint64_t> expected_hash = std::nullopt) {
  using nlohmann::json;
  json manifest;
  try {
    const auto text = read_file(dir / "manifest.json");
    manifest = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable checkpoint manifest: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw CorruptCheckpoint(std::string("missing checkpoint manifest: ") + e.what());
  }
  std::vector<char> blob;
  try {
    blob = read_file(dir / "params.bin");
  } catch (const std::runtime_error& e) {
    throw CorruptCheckpoint(std::string("missing parameter blob: ") + e.what());
  }

  TrainState st;
  try {
    if (manifest.at("format") != kCheckpointFormat || manifest.at("version") != kCheckpointVersion)
      throw CorruptCheckpoint("unsupported checkpoint format");
    if (expected_hash && manifest.at("config_hash").get<std::string>() != hash_hex(*expected_hash))
      throw ConfigError("checkpoint was written for a different configuration (hash " +
                        manifest.at("config_hash").get<std::string>() + ", expected " + hash_hex(*expected_hash) + ")");
    const auto values = manifest.at("blob_values").get<std::size_t>();
    if (blob.size() != 8 * values)
      throw CorruptCheckpoint("parameter blob holds " + std::to_string(blob.size()) + " bytes, manifest expects " +
                              std::to_string(8 * values));

    st.epoch = manifest.at("epoch").get<std::size_t>();
    st.potentials.weights = manifest.at("weights").get<std::vector<double>>();
    for (const auto& n : manifest.at("potentials")) st.potentials.nets.push_back(mlp_skeleton(n));
    for (const auto& m : manifest.at("maps")) {
      const auto kind = plan_kind_from_string(m.at("kind").get<std::string>());
      const auto& nets = m.at("networks");
      switch (kind) {
        case PlanKind::deterministic:
          st.maps.emplace_back(DeterministicMap{mlp_skeleton(nets.at(0))});
          break;
        case PlanKind::stochastic:
          st.maps.emplace_back(StochasticMap{mlp_skeleton(nets.at(0)), m.at("noise_dim").get<std::size_t>()});
          break;
        case PlanKind::gaussian:
          st.maps.emplace_back(GaussianModel{mlp_skeleton(nets.at(0)), mlp_skeleton(nets.at(1))});
          break;
      }
    }
    if (st.maps.size() != st.potentials.nets.size() || st.potentials.weights.size() != st.maps.size())
      throw CorruptCheckpoint("checkpoint lists inconsistent numbers of maps, potentials and weights");

    auto restore_adam = [](const json& j, const auto& tensors) {
      AdamState s({j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                   j.at("eps").get<double>()},
                  tensors);
      s.step = j.at("step").get<std::int64_t>();
      return s;
    };
    st.potential_opt = restore_adam(manifest.at("optimizers").at("potential"), st.potentials.tensors());
    st.map_opt = restore_adam(manifest.at("optimizers").at("map"), st.map_tensors());

    const auto& streams = manifest.at("streams");
    st.streams.inputs = detail::streams_from(streams.at("inputs"));
    st.streams.noise = detail::streams_from(streams.at("noise"));
    st.streams.priors = detail::streams_from(streams.at("priors"));

    for (const auto& r : manifest.at("history")) {
      HistoryRecord rec;
      rec.epoch = r.at("epoch").get<std::size_t>();
      rec.v_f = r.at("v_f").get<double>();
      rec.v_t = r.at("v_t").get<std::vector<double>>();
      rec.wall_ms = r.at("wall_ms").get<double>();
      st.history.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CorruptCheckpoint(std::string("malformed checkpoint manifest: ") + e.what());
  }

  BlobReader in(blob);
  for (auto& net : st.potentials.nets) read_params(in, net);
  for (auto& m : st.maps)
    for (auto* net : networks(m)) read_params(in, *net);
  for (auto* opt : {&st.potential_opt, &st.map_opt}) {
    for (auto& t : opt->m) in.read_into(t);
    for (auto& t : opt->v) in.read_into(t);
  }
  if (!in.exhausted()) throw CorruptCheckpoint("parameter blob has trailing data");
  return st;
}

}  // namespace notbary
