// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

// Flat little-endian float64 blobs plus JSON manifests describing network
// shapes. Parameters are written in MlpParams::tensors() order.

#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "notbary/errors.hpp"
#include "notbary/mlp.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

inline void append_f64_le(std::vector<char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double read_f64_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline void append_f64_le(std::vector<char>& out, std::span<const double> values) {
  out.reserve(out.size() + 8 * values.size());
  for (double v : values) append_f64_le(out, v);
}

/// Sequential reader over a little-endian float64 blob.
class BlobReader {
 public:
  explicit BlobReader(std::span<const char> bytes) : bytes_(bytes) {}

  void read_into(Tensor& t) {
    if (remaining() < t.size())
      throw CorruptCheckpoint("parameter blob too short: need " + std::to_string(t.size()) + " more values, have " +
                              std::to_string(remaining()));
    for (auto& v : t.data()) {
      v = read_f64_le(bytes_.data() + pos_);
      pos_ += 8;
    }
  }

  std::size_t remaining() const { return (bytes_.size() - pos_) / 8; }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

/// Layer shapes and activation tags of a network.
inline nlohmann::json mlp_manifest(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) layers.push_back({l.weight.rows(), l.weight.cols()});
  return {{"layers", layers}, {"hidden_activation", to_string(p.hidden)}, {"output_activation", to_string(p.output)}};
}

/// Zero-filled network with the shapes recorded in a manifest.
inline MlpParams mlp_skeleton(const nlohmann::json& manifest) {
  MlpParams p;
  try {
    p.hidden = activation_from_string(manifest.at("hidden_activation").get<std::string>());
    p.output = activation_from_string(manifest.at("output_activation").get<std::string>());
    for (const auto& l : manifest.at("layers")) {
      const auto in = l.at(0).get<std::size_t>();
      const auto out = l.at(1).get<std::size_t>();
      p.layers.push_back({Tensor::matrix(in, out), Tensor({out})});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("malformed network manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CorruptCheckpoint(std::string("malformed network manifest: ") + e.what());
  }
  if (p.layers.empty()) throw CorruptCheckpoint("malformed network manifest: no layers");
  return p;
}

inline void append_params(std::vector<char>& out, const MlpParams& p) {
  for (const auto* t : p.tensors()) append_f64_le(out, t->data());
}

inline void read_params(BlobReader& in, MlpParams& p) {
  for (auto* t : p.tensors()) in.read_into(*t);
}

/// Writes via a sibling temporary file and rename, so readers never observe
/// a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace notbary
