#include <gtest/gtest.h>

#include "blindcal/objective.hpp"
#include "blindcal/random.hpp"
#include "oracles.hpp"

using namespace blindcal;

namespace {

Vector random_vector(Rng& rng, Index k, double scale = 1.0) {
  Vector v(k);
  for (Index i = 0; i < k; ++i) v[i] = scale * rng.normal();
  return v;
}

struct Fixture {
  SensingEnsemble ensemble;
  GroundTruth truth;
  SnapshotSet y;
};

Fixture make_fixture(Index n, Index m, Index p, double rho, std::uint64_t seed) {
  Rng rng(seed);
  auto e = SensingEnsemble::generate(n, m, p, Distribution::Gaussian, derive_seed(seed, {{"ensemble", 0}}));
  const Vector d = rho > 0.0 ? draw_gain_perturbation(m, rho, derive_seed(seed, {{"gains", 0}})) : Vector::Ones(m);
  GroundTruth t = make_ground_truth(random_vector(rng, n), d, rho);
  SnapshotSet y = sense(e, t.x, t.d);
  return {std::move(e), std::move(t), std::move(y)};
}

}  // namespace

TEST(Objective, ZeroAtTruthAndOrbit) {
  const Fixture f = make_fixture(7, 5, 3, 0.4, 1);
  EXPECT_LE(objective_value(f.ensemble, f.y, {f.truth.x, f.truth.d}), 1e-20);
  EXPECT_LE(objective_value(f.ensemble, f.y, {2.0 * f.truth.x, 0.5 * f.truth.d}), 1e-20);
}

TEST(Objective, HandExample) {
  const auto e = SensingEnsemble::from_matrices({Matrix::Identity(2, 2)});
  const SnapshotSet y = sense(e, Vector::Ones(2), Vector::Ones(2));
  const double f = objective_value(e, y, {(Vector(2) << 2.0, 1.0).finished(), Vector::Ones(2)});
  EXPECT_DOUBLE_EQ(f, 0.25);
}

TEST(Objective, MatchesLoopOracle) {
  Rng rng(2);
  const Fixture f = make_fixture(6, 4, 5, 0.2, 2);
  const auto a = oracle::matrices(f.ensemble);
  for (int t = 0; t < 10; ++t) {
    const Vector xi = random_vector(rng, 6);
    const Vector g = random_vector(rng, 4);
    const double ours = objective_value(f.ensemble, f.y, {xi, g});
    EXPECT_NEAR(ours, oracle::objective(a, f.y.values, xi, g), 1e-13 * ours);
  }
}

TEST(Objective, DimensionErrors) {
  const Fixture f = make_fixture(4, 3, 2, 0.1, 3);
  EXPECT_THROW(objective_value(f.ensemble, f.y, {Vector::Zero(3), Vector::Ones(3)}), DimensionError);
  EXPECT_THROW(objective_value(f.ensemble, f.y, {Vector::Zero(4), Vector::Ones(2)}), DimensionError);
  const SnapshotSet wrong{Matrix::Zero(3, 5)};
  EXPECT_THROW(objective_value(f.ensemble, wrong, {Vector::Zero(4), Vector::Ones(3)}), DimensionError);
}

TEST(Gradients, VanishAtTruth) {
  const Fixture f = make_fixture(8, 6, 4, 0.3, 4);
  const GradientPair g = gradients(f.ensemble, f.y, {f.truth.x, f.truth.d});
  EXPECT_LE(g.grad_xi.norm(), 1e-12);
  EXPECT_LE(g.grad_gamma.norm(), 1e-12);
  EXPECT_LE(g.grad_gamma_projected.norm(), 1e-12);
}

TEST(Gradients, MatchFiniteDifferences) {
  Rng rng(5);
  const Fixture f = make_fixture(3, 4, 2, 0.3, 5);
  const auto a = oracle::matrices(f.ensemble);
  for (int t = 0; t < 20; ++t) {
    const Vector xi = random_vector(rng, 3);
    const Vector gamma = (random_vector(rng, 4, 0.3).array() + 1.0).matrix();
    const GradientPair g = gradients(f.ensemble, f.y, {xi, gamma});
    const Vector fd = oracle::fd_gradient(a, f.y.values, xi, gamma, 1e-6);
    EXPECT_LE(oracle::rel(g.grad_xi, fd.head(3)), 1e-5);
    EXPECT_LE(oracle::rel(g.grad_gamma, fd.tail(4)), 1e-5);
  }
}

TEST(Gradients, ProjectedIsZeroSum) {
  Rng rng(6);
  const Fixture f = make_fixture(9, 7, 3, 0.5, 6);
  for (int t = 0; t < 20; ++t) {
    const GradientPair g = gradients(f.ensemble, f.y, {random_vector(rng, 9, 3.0), random_vector(rng, 7, 3.0)});
    EXPECT_NEAR(g.grad_gamma_projected.sum(), 0.0, 1e-10 * 7);
    EXPECT_LE((g.grad_gamma_projected - project_zero_sum(g.grad_gamma)).norm(), 1e-15);
  }
}

TEST(Gradients, CachedAndUncachedAgree) {
  Rng rng(7);
  const Fixture f = make_fixture(5, 4, 6, 0.2, 7);
  const EvaluationPoint pt{random_vector(rng, 5), random_vector(rng, 4)};
  const auto cache = evaluate_residuals(f.ensemble, f.y, pt);
  const GradientPair a = gradients(f.ensemble, f.y, pt, cache);
  const GradientPair b = gradients(f.ensemble, f.y, pt);
  EXPECT_EQ(a.grad_xi, b.grad_xi);
  EXPECT_EQ(a.grad_gamma, b.grad_gamma);
}

TEST(Hessian, SymmetricAndMatchesSecondDifferences) {
  Rng rng(8);
  const Fixture f = make_fixture(4, 3, 3, 0.3, 8);
  const auto a = oracle::matrices(f.ensemble);
  for (int t = 0; t < 10; ++t) {
    const Vector xi = random_vector(rng, 4);
    const Vector gamma = (random_vector(rng, 3, 0.3).array() + 1.0).matrix();
    const Matrix h = hessian(f.ensemble, f.y, {xi, gamma});
    EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Vector v = random_vector(rng, 7);
    const Vector fd = oracle::fd_hessian_vector(a, f.y.values, xi, gamma, v, 1e-3);
    EXPECT_LE(oracle::rel(h * v, fd), 1e-4);
  }
}

TEST(Hessian, NegativeCurvatureWitness) {
  const Fixture f = make_fixture(6, 4, 10, 0.2, 9);
  const Matrix h = hessian(f.ensemble, f.y, {-f.truth.x, f.truth.d});
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  EXPECT_LT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Hessian, SizeGate) {
  const auto e = SensingEnsemble::generate(2048, 1, 1, Distribution::Gaussian, 1, SensingEnsemble::Storage::Lazy);
  const SnapshotSet y{Matrix::Zero(1, 1)};
  EXPECT_THROW(hessian(e, y, {Vector::Zero(2048), Vector::Ones(1)}), ParameterError);
}

TEST(Expected, ObjectiveIdentities) {
  Rng rng(10);
  const Fixture f = make_fixture(6, 5, 2, 0.3, 10);
  EXPECT_NEAR(expected_objective({f.truth.x, f.truth.d}, f.truth), 0.0, 1e-14);
  EXPECT_NEAR(expected_objective({-3.0 * f.truth.x, f.truth.d / -3.0}, f.truth), 0.0, 1e-12);
  const EvaluationPoint pt{random_vector(rng, 6), random_vector(rng, 5)};
  const double direct = 0.5 * (pt.xi * pt.gamma.transpose() - f.truth.x * f.truth.d.transpose()).squaredNorm() / 5.0;
  EXPECT_NEAR(expected_objective(pt, f.truth), direct, 1e-12 * direct);
  EXPECT_NEAR(2.0 * expected_objective(pt, f.truth), delta_F(pt, f.truth), 1e-12 * direct);
}

TEST(Expected, MonteCarloObjective) {
  // Average of f over fresh ensembles at a fixed point.
  Rng rng(11);
  const Index n = 8, m = 16, p = 8;
  const GroundTruth truth = make_ground_truth(random_vector(rng, n), draw_gain_perturbation(m, 0.3, 4), 0.3);
  const EvaluationPoint pt{truth.x + random_vector(rng, n, 0.5),
                           project_C_rho((random_vector(rng, m, 0.3).array() + 1.0).matrix(), 0.3)};
  double mean = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto e = SensingEnsemble::generate(n, m, p, Distribution::Gaussian, derive_seed(12, {{"t", static_cast<std::uint64_t>(t)}}));
    mean += objective_value(e, sense(e, truth.x, truth.d), pt);
  }
  mean /= trials;
  const double expected = expected_objective(pt, truth);
  EXPECT_LE(std::abs(mean - expected) / expected, 0.05);
}

TEST(Expected, HessianBlocksAtTruth) {
  Rng rng(13);
  const GroundTruth t = make_ground_truth(random_vector(rng, 3), draw_gain_perturbation(4, 0.2, 1), 0.2);
  const Matrix h = expected_hessian({t.x, t.d}, t);
  EXPECT_LE((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(h(0, 0), t.d.squaredNorm() / 4.0, 1e-14);
  EXPECT_NEAR(h(3, 3), t.x.squaredNorm() / 4.0, 1e-14);
  EXPECT_NEAR(h(0, 3), t.x[0] * t.d[0] / 4.0, 1e-14);
}

TEST(Expected, HessianMatchesMonteCarlo) {
  Rng rng(14);
  const Index n = 4, m = 6, p = 400;
  const GroundTruth t = make_ground_truth(random_vector(rng, n), draw_gain_perturbation(m, 0.3, 2), 0.3);
  const EvaluationPoint pt{random_vector(rng, n), (random_vector(rng, m, 0.2).array() + 1.0).matrix()};
  const auto e = SensingEnsemble::generate(n, m, p, Distribution::Gaussian, 77);
  const Matrix h = hessian(e, sense(e, t.x, t.d), pt);
  const Matrix eh = expected_hessian(pt, t);
  EXPECT_LE((h - eh).norm() / eh.norm(), 0.15);
}

TEST(Expected, Initialisation) {
  Vector x(2);
  x << 1.0, -2.0;
  Vector d(3);
  d << 1.1, 0.9, 1.0;
  const GroundTruth t = make_ground_truth(x, d, 0.1);
  EXPECT_LE((expected_initialisation(t) - t.x).norm(), 1e-14);
}
