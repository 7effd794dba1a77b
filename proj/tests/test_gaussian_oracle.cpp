// Copyright (c) 2026, The notbary Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "notbary/gaussian_oracle.hpp"

namespace notbary {
namespace {

Eigen::MatrixXd random_spd(CounterRng& rng, Eigen::Index d, double shift = 0.1) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::MatrixXd s = a * a.transpose() / static_cast<double>(d) + shift * Eigen::MatrixXd::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

GaussianDist random_gaussian(CounterRng& rng, Eigen::Index d) {
  Eigen::VectorXd m(d);
  for (Eigen::Index i = 0; i < d; ++i) m[i] = rng.normal();
  return {m, random_spd(rng, d, 0.3)};
}

GaussianDist g1(double mean, double var) { return {Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, var)}; }

// ---- sqrtm_psd -------------------------------------------------------------------

TEST(Sqrtm, Examples) {
  EXPECT_TRUE(sqrtm_psd(Eigen::MatrixXd::Identity(3, 3)).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-14));
  const Eigen::MatrixXd r = sqrtm_psd(Eigen::Vector2d(4.0, 9.0).asDiagonal().toDenseMatrix());
  EXPECT_NEAR(r(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(r(1, 1), 3.0, 1e-14);
  EXPECT_NEAR(r(0, 1), 0.0, 1e-14);
}

TEST(Sqrtm, ResidualOnRandomSpd) {
  CounterRng rng(1, 0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd a = random_spd(rng, 1 + static_cast<Eigen::Index>(rng.below(32)));
    const Eigen::MatrixXd r = sqrtm_psd(a);
    EXPECT_LE((r * r - a).norm(), 1e-10 * a.norm());
    EXPECT_LE((r - r.transpose()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Sqrtm, RejectsAsymmetricInput) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  a(0, 1) = 1e-3;
  EXPECT_THROW(sqrtm_psd(a), ContractViolation);
}

TEST(Sqrtm, ClampsTinyNegativeEigenvalues) {
  Eigen::Matrix2d a;
  a << 1.0, 1.0, 1.0, 1.0;  // eigenvalues 2 and 0 (rounded)
  const Eigen::MatrixXd r = sqrtm_psd(a);
  EXPECT_LE((r * r - a).norm(), 1e-5);
  EXPECT_THROW(sqrtm_psd(-Eigen::Matrix2d::Identity()), ContractViolation);
}

// ---- bures_wasserstein_sq -----------------------------------------------------------

TEST(BuresWasserstein, Examples) {
  CounterRng rng(2, 0);
  const auto g = random_gaussian(rng, 4);
  EXPECT_NEAR(bures_wasserstein_sq(g, g), 0.0, 1e-10);
  EXPECT_NEAR(bures_wasserstein_sq(g1(0, 1), g1(2, 1)), 4.0, 1e-12);
  EXPECT_NEAR(bures_wasserstein_sq(g1(0, 1), g1(0, 9)), 4.0, 1e-12);
  EXPECT_NEAR(half_convention(bures_wasserstein_sq(g1(0, 1), g1(0, 9))), 2.0, 1e-12);
  EXPECT_THROW(bures_wasserstein_sq(g1(0, 1), random_gaussian(rng, 2)), ContractViolation);
}

TEST(BuresWasserstein, SymmetricAndTriangle) {
  CounterRng rng(3, 0);
  for (int t = 0; t < 100; ++t) {
    const auto a = random_gaussian(rng, 3), b = random_gaussian(rng, 3), c = random_gaussian(rng, 3);
    const double ab = bures_wasserstein_sq(a, b), ba = bures_wasserstein_sq(b, a);
    EXPECT_NEAR(ab, ba, 1e-9 * std::max(1.0, ab));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(std::sqrt(ab), std::sqrt(bures_wasserstein_sq(a, c)) + std::sqrt(bures_wasserstein_sq(c, b)) + 1e-9);
  }
}

// ---- fixed_point_barycenter ------------------------------------------------------------

TEST(FixedPoint, IdenticalInputsAreAFixedPoint) {
  CounterRng rng(4, 0);
  const auto g = random_gaussian(rng, 5);
  const auto r = fixed_point_barycenter({g, g, g}, {0.2, 0.3, 0.5});
  EXPECT_LE((r.barycenter.mean - g.mean).norm(), 1e-12);
  EXPECT_LE((r.barycenter.cov - g.cov).norm(), 1e-10);
}

TEST(FixedPoint, OneDimensionalStdAveraging) {
  const auto r = fixed_point_barycenter({g1(1, 1), g1(-3, 9)}, {0.5, 0.5});
  EXPECT_NEAR(r.barycenter.cov(0, 0), 4.0, 1e-10);
  EXPECT_NEAR(std::sqrt(r.barycenter.cov(0, 0)), 2.0, 1e-8);
  EXPECT_NEAR(r.barycenter.mean[0], -1.0, 1e-14);
  CounterRng rng(5, 0);
  for (int t = 0; t < 20; ++t) {
    const double s1 = 0.2 + rng.uniform() * 3, s2 = 0.2 + rng.uniform() * 3, s3 = 0.2 + rng.uniform() * 3;
    const double w1 = 0.1 + 0.3 * rng.uniform(), w2 = 0.1 + 0.3 * rng.uniform(), w3 = 1.0 - w1 - w2;
    const auto b = fixed_point_barycenter({g1(0, s1 * s1), g1(0, s2 * s2), g1(0, s3 * s3)}, {w1, w2, w3});
    EXPECT_LE(std::abs(std::sqrt(b.barycenter.cov(0, 0)) - (w1 * s1 + w2 * s2 + w3 * s3)), 1e-8);
  }
}

TEST(FixedPoint, CommutingDiagonalCovariances) {
  const GaussianDist a{Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 4).asDiagonal().toDenseMatrix()};
  const GaussianDist b{Eigen::Vector2d::Zero(), Eigen::Vector2d(9, 16).asDiagonal().toDenseMatrix()};
  const auto r = fixed_point_barycenter({a, b}, {0.5, 0.5});
  EXPECT_NEAR(r.barycenter.cov(0, 0), 4.0, 1e-10);
  EXPECT_NEAR(r.barycenter.cov(1, 1), 9.0, 1e-10);
  EXPECT_NEAR(r.barycenter.cov(0, 1), 0.0, 1e-10);
}

TEST(FixedPoint, FirstOrderOptimality) {
  for (std::size_t d : {2u, 4u, 8u, 16u}) {
    const auto inputs = random_gaussian_instance(d, 3, d);
    const std::vector<double> w{0.25, 0.25, 0.5};
    const auto r = fixed_point_barycenter(inputs, w);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < 3; ++k) acc += w[k] * gaussian_monge_map(r.barycenter, inputs[k]).matrix;
    EXPECT_LE((acc - Eigen::MatrixXd::Identity(acc.rows(), acc.cols())).norm(), 1e-6) << "D=" << d;
    EXPECT_LE(r.residual, 1e-12);
  }
}

TEST(FixedPoint, Errors) {
  EXPECT_THROW(fixed_point_barycenter({g1(0, 1), g1(0, 2)}, {0.6, 0.6}), ContractViolation);
  EXPECT_THROW(fixed_point_barycenter({g1(0, 1), g1(0, 2)}, {1.0}), ContractViolation);
  try {
    fixed_point_barycenter(random_gaussian_instance(8, 3, 1), {0.25, 0.25, 0.5}, 1e-300, 2);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

// ---- gaussian_monge_map -------------------------------------------------------------------

TEST(MongeMap, Examples) {
  CounterRng rng(6, 0);
  const auto p = random_gaussian(rng, 3);
  const auto id = gaussian_monge_map(p, p);
  EXPECT_LE((id.matrix - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-10);
  EXPECT_LE(id.offset.norm(), 1e-10);
  const auto t = gaussian_monge_map(g1(0, 1), g1(5, 4));
  EXPECT_NEAR(t.matrix(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(t.offset[0], 5.0, 1e-12);
}

TEST(MongeMap, PushforwardIdentityAndSymmetry) {
  CounterRng rng(7, 0);
  for (int i = 0; i < 10; ++i) {
    const auto p = random_gaussian(rng, 4), q = random_gaussian(rng, 4);
    const auto t = gaussian_monge_map(p, q);
    EXPECT_LE((t.matrix - t.matrix.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.matrix);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    const auto pushed = push_forward(p, t);
    EXPECT_LE((pushed.mean - q.mean).norm(), 1e-10);
    EXPECT_LE((pushed.cov - q.cov).norm(), 1e-9 * q.cov.norm());
  }
}

TEST(MongeMap, MappedSampleMomentsMatchTarget) {
  CounterRng rng(8, 0);
  const auto p = random_gaussian(rng, 4), q = random_gaussian(rng, 4);
  const auto t = gaussian_monge_map(p, q);
  Sampler s(GaussianSource(p), 8, 1);
  const std::size_t n = 100000;
  const Tensor x = s.sample(n);
  RowMatrix y = x.mat() * t.matrix.transpose();
  y.rowwise() += t.offset.transpose();
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const RowMatrix c = y.rowwise() - mean;
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(n - 1);
  const double sn = std::sqrt(static_cast<double>(n));
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_LE(std::abs(mean[i] - q.mean[i]), 5.0 * std::sqrt(q.cov(i, i)) / sn);
  EXPECT_LE((cov - q.cov).norm(), 10.0 * q.cov.norm() / sn);
}

TEST(MongeMap, TransportCostEqualsHalfBuresWasserstein) {
  CounterRng rng(9, 0);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_gaussian(rng, 5), q = random_gaussian(rng, 5);
    EXPECT_NEAR(affine_transport_cost(p, gaussian_monge_map(p, q)), 0.5 * bures_wasserstein_sq(p, q), 1e-8);
  }
}

TEST(MongeMap, DimensionMismatch) {
  CounterRng rng(10, 0);
  EXPECT_THROW(gaussian_monge_map(random_gaussian(rng, 2), random_gaussian(rng, 3)), ContractViolation);
}

}  // namespace
}  // namespace notbary
