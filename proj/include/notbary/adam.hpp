// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "notbary/errors.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  /// Zero moments shaped like each tensor in `params` (a range of pointers).
  template <class Range>
  AdamState(AdamConfig cfg, const Range& params) : config(cfg) {
    for (const Tensor* p : params) {
      m.push_back(p->zeros_like());
      v.push_back(p->zeros_like());
    }
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Throws DivergenceError on a non-finite
/// gradient before touching any parameter.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  detail::require(params.size() == grads.size() && params.size() == state.m.size(),
                  "adam_step: parameter/gradient/state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::require(params[i]->same_shape(grads[i]) && params[i]->same_shape(state.m[i]),
                    "adam_step: shape mismatch at tensor " + std::to_string(i));
    if (!grads[i].all_finite())
      throw DivergenceError("adam_step: non-finite gradient in tensor " + std::to_string(i));
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace notbary
