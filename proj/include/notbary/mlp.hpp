// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "notbary/autodiff.hpp"
#include "notbary/errors.hpp"
#include "notbary/rng.hpp"
#include "notbary/tensor.hpp"

namespace notbary {

enum class Activation { relu, softplus, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ContractViolation("unknown activation '" + s + "'");
}

namespace ad {
inline Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::softplus: return softplus(x);
    case Activation::identity: return x;
  }
  return x;
}
}  // namespace ad

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // [out]
};

/// Fully connected network: hidden layers use `hidden`, the last layer `output`.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Activation hidden = Activation::relu;
  Activation output = Activation::identity;

  std::size_t input_width() const { return layers.front().weight.rows(); }
  std::size_t output_width() const { return layers.back().weight.cols(); }

  void validate() const {
    detail::require(!layers.empty(), "MlpParams: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      detail::require(l.weight.rank() == 2 && l.bias.size() == l.weight.cols(),
                      "MlpParams: bias width does not match weight in layer " + std::to_string(i));
      if (i > 0)
        detail::require(layers[i - 1].weight.cols() == l.weight.rows(),
                        "MlpParams: incompatible widths at layer " + std::to_string(i));
      detail::require(l.weight.all_finite() && l.bias.all_finite(), "MlpParams: non-finite entries");
    }
  }

  /// Parameter tensors in canonical order: W0, b0, W1, b1, ...
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    if (a.hidden != b.hidden || a.output != b.output || a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i)
      if (!(a.layers[i].weight == b.layers[i].weight) || !(a.layers[i].bias == b.layers[i].bias))
        return false;
    return true;
  }
};

/// Weights and biases uniform in +-1/sqrt(fan_in).
inline MlpParams make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                          CounterRng& rng, Activation hidden_act = Activation::relu,
                          Activation output_act = Activation::identity) {
  detail::require(in >= 1 && out >= 1, "make_mlp: widths must be positive");
  MlpParams p;
  p.hidden = hidden_act;
  p.output = output_act;
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    DenseLayer l{Tensor::matrix(widths[i], widths[i + 1]), Tensor({widths[i + 1]})};
    for (auto& w : l.weight.data()) w = bound * (2.0 * rng.uniform() - 1.0);
    for (auto& b : l.bias.data()) b = bound * (2.0 * rng.uniform() - 1.0);
    p.layers.push_back(std::move(l));
  }
  return p;
}

/// Graph leaves for one forward pass over an MlpParams.
class MlpBinding {
 public:
  MlpBinding(const MlpParams& params, bool trainable) : params_(&params) {
    for (const auto* t : params.tensors())
      vars_.push_back(trainable ? ad::parameter(*t) : ad::constant(*t));
  }

  ad::Var forward(const ad::Var& x) const {
    detail::require(x.value().rank() == 2 && x.cols() == params_->input_width(),
                    "mlp_forward: input width " + std::to_string(x.cols()) + " but network expects " +
                        std::to_string(params_->input_width()));
    ad::Var h = x;
    const std::size_t n = params_->layers.size();
    for (std::size_t i = 0; i < n; ++i) {
      h = ad::add_bias(ad::matmul(h, vars_[2 * i]), vars_[2 * i + 1]);
      h = ad::activate(h, i + 1 == n ? params_->output : params_->hidden);
    }
    return h;
  }

  const std::vector<ad::Var>& vars() const noexcept { return vars_; }

  /// Gradients in MlpParams::tensors() order.
  std::vector<Tensor> grads() const {
    std::vector<Tensor> g;
    g.reserve(vars_.size());
    for (const auto& v : vars_) g.push_back(v.grad());
    return g;
  }

 private:
  const MlpParams* params_;
  std::vector<ad::Var> vars_;
};

/// Forward pass with parameters held constant.
inline ad::Var mlp_forward(const MlpParams& params, const ad::Var& x) {
  return MlpBinding(params, false).forward(x);
}

inline ad::Var mlp_forward(const MlpParams& params, const Tensor& x) {
  return mlp_forward(params, ad::constant(x));
}

}  // namespace notbary
