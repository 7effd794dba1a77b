// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "notbary/adam.hpp"
#include "notbary/autodiff.hpp"
#include "notbary/mlp.hpp"
#include "test_util.hpp"

namespace notbary {
namespace {

using testing::random_matrix;
using testing::rel_error;

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor({2, 0}), ContractViolation);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), ContractViolation);
  EXPECT_THROW(Tensor({1, 2, 3}), ContractViolation);
  const Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(Tensor({4}).rows(), 1u);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

// ---- mlp_forward -------------------------------------------------------------

TEST(MlpForward, ZeroNetworkGivesZero) {
  CounterRng rng(1, 0);
  MlpParams p = make_mlp(3, {8, 8}, 2, rng);
  for (auto* t : p.tensors())
    for (auto& v : t->data()) v = 0.0;
  const Tensor y = mlp_forward(p, random_matrix(rng, 5, 3)).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLayer) {
  MlpParams p;
  p.output = Activation::identity;
  p.layers.push_back({Tensor::matrix({{1, 0}, {0, 1}}), Tensor({2})});
  const Tensor y = mlp_forward(p, Tensor::matrix({{1, 2}})).value();
  EXPECT_EQ(y(0, 0), 1.0);
  EXPECT_EQ(y(0, 1), 2.0);
}

TEST(MlpForward, MatchesHandRolledMatmul) {
  CounterRng rng(7, 0);
  const MlpParams p = make_mlp(2, {16}, 1, rng);
  const Tensor x = random_matrix(rng, 10, 2);
  const Tensor y = mlp_forward(p, x).value();
  const auto& w0 = p.layers[0].weight;
  const auto& b0 = p.layers[0].bias;
  const auto& w1 = p.layers[1].weight;
  const auto& b1 = p.layers[1].bias;
  for (std::size_t i = 0; i < 10; ++i) {
    double out = b1[0];
    for (std::size_t h = 0; h < 16; ++h) {
      double a = b0[h];
      for (std::size_t j = 0; j < 2; ++j) a += x(i, j) * w0(j, h);
      out += std::max(a, 0.0) * w1(h, 0);
    }
    EXPECT_NEAR(y(i, 0), out, 1e-12);
  }
}

TEST(MlpForward, RejectsWrongWidth) {
  CounterRng rng(1, 0);
  const MlpParams p = make_mlp(3, {4}, 1, rng);
  EXPECT_THROW(mlp_forward(p, Tensor::matrix(2, 2)), ContractViolation);
}

// ---- backward ------------------------------------------------------------------

TEST(Backward, QuadraticGradient) {
  auto x = ad::parameter(Tensor::vector({3, 4}));
  auto f = 0.5 * ad::sum(ad::square(x));
  ad::backward(f);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, ConstantFunctionHasZeroGradient) {
  auto x = ad::parameter(Tensor::vector({3, 4}));
  auto f = ad::add_scalar(0.0 * ad::sum(x), 7.0);
  ad::backward(f);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  auto x = ad::parameter(Tensor::vector({3, 4}));
  EXPECT_THROW(ad::backward(ad::square(x)), ContractViolation);
}

/// Relative error between backward() and central differences for the loss
/// sum(y^2) / 2 + sum(y): largest absolute deviation over every parameter and
/// input entry, divided by the largest gradient entry. A per-tensor ratio would
/// blow up rounding noise in layers whose gradient is exactly zero (dead ReLUs).
double mlp_gradient_error(const MlpParams& params, const Tensor& x) {
  auto loss_of = [](const ad::Var& y) { return 0.5 * ad::sum(ad::square(y)) + ad::sum(y); };
  MlpBinding bound(params, true);
  auto xv = ad::parameter(x);
  ad::backward(loss_of(bound.forward(xv)));
  const auto grads = bound.grads();

  double diff = 0.0, ref = 1e-8;
  auto accumulate = [&](const Tensor& g, const Tensor& fd) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      diff = std::max(diff, std::abs(g[i] - fd[i]));
      ref = std::max(ref, std::abs(fd[i]));
    }
  };
  const auto tensors = params.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto f = [&](const Tensor& probe) {
      MlpParams copy = params;
      *copy.tensors()[t] = probe;
      return loss_of(mlp_forward(copy, x)).item();
    };
    accumulate(grads[t], ad::finite_diff_grad(f, *tensors[t], 1e-5));
  }
  auto fx = [&](const Tensor& probe) { return loss_of(mlp_forward(params, probe)).item(); };
  accumulate(xv.grad(), ad::finite_diff_grad(fx, x, 1e-5));
  return diff / ref;
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
  CounterRng rng(11, 0);
  const MlpParams p = make_mlp(3, {16, 16}, 2, rng);
  EXPECT_LE(mlp_gradient_error(p, random_matrix(rng, 6, 3)), 1e-4);
}

TEST(Backward, HundredRandomMlpConfigurations) {
  CounterRng rng(12, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> hidden;
    for (std::size_t i = 0; i < depth; ++i) hidden.push_back(1 + rng.below(32));
    const std::size_t in = 1 + rng.below(32), out = 1 + rng.below(32);
    const MlpParams p = make_mlp(in, hidden, out, rng);
    worst = std::max(worst, mlp_gradient_error(p, random_matrix(rng, 3, in)));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Backward, SmoothActivationsMatchFiniteDifferences) {
  CounterRng rng(13, 0);
  const MlpParams p = make_mlp(4, {8, 8}, 3, rng, Activation::softplus, Activation::softplus);
  EXPECT_LE(mlp_gradient_error(p, random_matrix(rng, 5, 4)), 1e-6);
}

TEST(Backward, GradientOfSumIsSumOfGradients) {
  CounterRng rng(14, 0);
  const Tensor x0 = random_matrix(rng, 4, 3);
  auto f1 = [](const ad::Var& x) { return ad::sum(ad::softplus(x)); };
  auto f2 = [](const ad::Var& x) { return ad::mean(ad::square(ad::matmul(x, ad::constant(Tensor::matrix(3, 2, 0.5))))); };
  auto a = ad::parameter(x0), b = ad::parameter(x0), c = ad::parameter(x0);
  ad::backward(f1(a));
  ad::backward(f2(b));
  ad::backward(f1(c) + f2(c));
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(c.grad()[i], a.grad()[i] + b.grad()[i], 1e-14);
}

TEST(Backward, StructuralOpsMatchFiniteDifferences) {
  CounterRng rng(15, 0);
  const Tensor x0 = random_matrix(rng, 3, 2);
  const Tensor w = random_matrix(rng, 4, 4);
  auto f = [&](const ad::Var& x) {
    ad::Var r = ad::repeat_rows(x, 2);                       // 6 x 2
    ad::Var c = ad::concat_cols(r, ad::square(r));           // 6 x 4
    ad::Var g = ad::group_mean(ad::exp(ad::scale(c, 0.3)), 3);  // 2 x 4
    ad::Var s = ad::slice_rows(ad::concat_rows({g, ad::constant(w)}), 1, 3);
    return ad::sum(ad::log(ad::add_scalar(ad::softplus(s), 1.0))) + ad::sum(ad::row_sum(ad::relu(s)));
  };
  auto x = ad::parameter(x0);
  ad::backward(f(x));
  const Tensor fd = ad::finite_diff_grad([&](const Tensor& t) { return f(ad::constant(t)).item(); }, x0, 1e-5);
  EXPECT_LE(rel_error(x.grad(), fd), 1e-6);
}

TEST(Backward, ConstantsCarryNoGraph) {
  auto c = ad::constant(Tensor::vector({1, 2}));
  auto p = ad::parameter(Tensor::vector({1, 2}));
  EXPECT_FALSE((c * c).requires_grad());
  EXPECT_TRUE((c * p).requires_grad());
}

// ---- finite_diff_grad ------------------------------------------------------------

TEST(FiniteDiff, Square) {
  const Tensor g = ad::finite_diff_grad([](const Tensor& t) { return t[0] * t[0]; }, Tensor::vector({3.0}), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, LinearIsExactUpToRounding) {
  const std::vector<double> a{0.5, -2.0, 3.0};
  auto f = [&](const Tensor& t) { return a[0] * t[0] + a[1] * t[1] + a[2] * t[2]; };
  const Tensor g = ad::finite_diff_grad(f, Tensor::vector({1.0, 2.0, -1.0}), 1e-5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], a[i], 1e-9);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(ad::finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor::vector({1.0}), 0.0),
               ContractViolation);
}

// ---- adam ------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> params{&p};
  AdamState st({}, params);
  const std::vector<Tensor> grads{Tensor::vector({0.0, 0.0})};
  for (int i = 0; i < 25; ++i) adam_step(params, grads, st);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(st.step, 25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.7);
  std::vector<Tensor*> params{&p};
  AdamState st({1e-3, 0.9, 0.999, 1e-8}, params);
  adam_step(params, std::vector<Tensor>{Tensor::scalar(2.0)}, st);
  EXPECT_NEAR(p.item() - 0.7, -1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, IdenticalParametersGetIdenticalUpdates) {
  Tensor a = Tensor::vector({0.3, 0.1}), b = Tensor::vector({0.3, 0.1});
  std::vector<Tensor*> params{&a, &b};
  AdamState st({}, params);
  const std::vector<Tensor> g{Tensor::vector({0.5, -1.5}), Tensor::vector({0.5, -1.5})};
  for (int i = 0; i < 5; ++i) adam_step(params, g, st);
  EXPECT_EQ(a, b);
}

TEST(Adam, NonFiniteGradientSignalsDivergence) {
  Tensor p = Tensor::vector({1.0, 2.0});
  std::vector<Tensor*> params{&p};
  AdamState st({}, params);
  const std::vector<Tensor> g{Tensor::vector({0.1, std::numeric_limits<double>::quiet_NaN()})};
  EXPECT_THROW(adam_step(params, g, st), DivergenceError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(st.step, 0);
}

TEST(Adam, RejectsShapeMismatch) {
  Tensor p = Tensor::vector({1.0, 2.0});
  std::vector<Tensor*> params{&p};
  AdamState st({}, params);
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor::vector({1.0})}, st), ContractViolation);
}

}  // namespace
}  // namespace notbary
