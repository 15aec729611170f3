#include <gtest/gtest.h>

#include <cmath>

#include "grid_oracle.hpp"
#include "robust_ode/random.hpp"
#include "robust_ode/weights.hpp"

using namespace robust_ode;
using robust_ode::testing::grid_oracle;

namespace {

GammaMatrix gamma_of(const Matrix& m) { return make_gamma(m, 0.0); }

Matrix diag(std::initializer_list<double> v) {
  Vector d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) {
    d[i++] = x;
  }
  return d.asDiagonal();
}

/** Random PSD matrix of random rank, scaled to lambda_max = 1. */
Matrix random_psd(CounterRng& rng, Eigen::Index K) {
  const auto rank = 1 + static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(K));
  Matrix A(K, rank);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = 0; j < rank; ++j) {
      A(i, j) = rng.normal();
    }
  }
  Matrix G = A * A.transpose();
  return G / operator_norm(G);
}

void expect_on_simplex(const Vector& w) {
  EXPECT_GE(w.minCoeff(), -1e-10);
  EXPECT_LE(w.maxCoeff(), 1.0 + 1e-10);
  EXPECT_NEAR(w.sum(), 1.0, 1e-10);
}

}  // namespace

TEST(ProjectToSimplex, KnownProjections) {
  Vector v(3);
  v << 0.2, 0.3, 0.5;
  EXPECT_LE((project_to_simplex(v) - v).norm(), 1e-15);
  v << 2.0, 0.0, 0.0;
  Vector e(3);
  e << 1.0, 0.0, 0.0;
  EXPECT_LE((project_to_simplex(v) - e).norm(), 1e-15);
  v << 1.0, 1.0, 1.0;
  EXPECT_LE((project_to_simplex(v) - Vector::Constant(3, 1.0 / 3.0)).norm(), 1e-15);
}

TEST(MinimizeQuadraticSimplex, Diag12) {
  const QpSolution s = minimize_quadratic_simplex(diag({1.0, 2.0}));
  EXPECT_NEAR(s.omega[0], 2.0 / 3.0, 1e-8);
  EXPECT_NEAR(s.omega[1], 1.0 / 3.0, 1e-8);
  EXPECT_NEAR(s.value, 2.0 / 3.0, 1e-10);
  EXPECT_NEAR(grid_oracle(diag({1.0, 2.0}), 1e-4).min_value, 2.0 / 3.0, 1e-10);
}

TEST(MinimizeQuadraticSimplex, IdentityGivesUniform) {
  const QpSolution s = minimize_quadratic_simplex(Matrix::Identity(5, 5));
  EXPECT_LE((s.omega - Vector::Constant(5, 0.2)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(s.value, 0.2, 1e-10);
}

TEST(MinimizeQuadraticSimplex, SingleSource) {
  Matrix g(1, 1);
  g << 3.5;
  const QpSolution s = minimize_quadratic_simplex(g);
  EXPECT_EQ(s.omega[0], 1.0);
  EXPECT_EQ(s.value, 3.5);
}

TEST(MinimizeQuadraticSimplex, MaxIterationsCarriesIterate) {
  QpOptions o;
  o.max_iterations = 1;
  Matrix g(3, 3);
  g << 1.0, 0.3, 0.0, 0.3, 2.0, 0.1, 0.0, 0.1, 5.0;
  try {
    (void)minimize_quadratic_simplex(g, o);
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MaxIterations);
    EXPECT_EQ(e.last_iterate().size(), 3);
    EXPECT_GT(e.gap(), 0.0);
  }
}

TEST(PlugInWeights, MatchesSolverExamples) {
  const auto w = plug_in_weights(gamma_of(diag({1.0, 2.0})));
  EXPECT_NEAR(w.omega[0], 2.0 / 3.0, 1e-8);
  EXPECT_EQ(w.method, WeightMethod::PlugIn);
  EXPECT_NEAR(plug_in_weights(gamma_of(Matrix::Identity(5, 5))).objective, 0.2, 1e-10);
}

TEST(RidgeWeights, Examples) {
  const auto w = ridge_weights(gamma_of(diag({1.0, 2.0})), 1.0);
  EXPECT_NEAR(w.omega[0], 0.6, 1e-8);
  EXPECT_NEAR(w.omega[1], 0.4, 1e-8);
  EXPECT_NEAR(w.objective, 0.36 + 2.0 * 0.16, 1e-8);

  Matrix g(3, 3);
  g << 1.0, 0.5, 0.0, 0.5, 3.0, 0.2, 0.0, 0.2, 0.1;
  const auto big = ridge_weights(gamma_of(g), 1e8);
  EXPECT_LE((big.omega - Vector::Constant(3, 1.0 / 3.0)).cwiseAbs().maxCoeff(), 1e-6);
  const auto zero = ridge_weights(gamma_of(g), 0.0);
  EXPECT_LE((zero.omega - plug_in_weights(gamma_of(g)).omega).norm(), 1e-12);
  EXPECT_THROW((void)ridge_weights(gamma_of(g), -1.0), Error);
}

TEST(StabilizedWeights, DegenerateDiagonal) {
  const auto w = stabilized_weights(gamma_of(diag({0.0, 0.0, 1.0})), 0.0);
  EXPECT_NEAR(w.omega[0], 0.5, 1e-6);
  EXPECT_NEAR(w.omega[1], 0.5, 1e-6);
  EXPECT_NEAR(w.omega[2], 0.0, 1e-6);
  for (double d : {0.01, 0.1, 0.5}) {
    const Matrix G = diag({0.0, 0.0, 1.0});
    const auto s = stabilized_weights(gamma_of(G), d);
    const auto oracle = grid_oracle(G, 1e-3, s.minimum_value + d);
    EXPECT_LE(s.omega.norm(), oracle.min_feasible_norm + 1e-6);
    // Closed form: w3 = min(sqrt(d), 1/3), remaining mass split evenly.
    EXPECT_NEAR(s.omega[2], std::min(std::sqrt(d), 1.0 / 3.0), 1e-6);
    EXPECT_NEAR(s.omega[0], s.omega[1], 1e-12);
  }
}

TEST(StabilizedWeights, FigureOneMatrix) {
  const auto w = stabilized_weights(gamma_of(stability_gamma()), 0.0);
  EXPECT_LE((w.omega - stability_target()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(w.minimum_value, 0.0, 1e-10);
}

TEST(StabilizedWeights, VacuousConstraintGivesUniform) {
  Matrix g(4, 4);
  g << 2.0, 0.1, 0.0, 0.3, 0.1, 1.0, 0.2, 0.0, 0.0, 0.2, 0.5, 0.0, 0.3, 0.0, 0.0, 4.0;
  const auto w = stabilized_weights(gamma_of(g), operator_norm(g));
  EXPECT_LE((w.omega - Vector::Constant(4, 0.25)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(w.multiplier, 0.0);
}

TEST(StabilizedWeights, IdenticalSourcesGiveUniform) {
  for (double c : {0.01, 1.0, 250.0}) {
    const auto w = stabilized_weights(gamma_of(Matrix::Constant(5, 5, c)), 0.0);
    EXPECT_LE((w.omega - Vector::Constant(5, 0.2)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(StabilizedWeights, Certificate) {
  StabilizedOptions o;
  o.certify = true;
  const auto w = stabilized_weights(gamma_of(stability_gamma()), 0.01, o);
  EXPECT_TRUE(w.certified);
  EXPECT_LE(w.certificate_norm_gap, 1e-6);
}

TEST(StabilizedWeights, RejectsNegativeTolerance) {
  EXPECT_THROW((void)stabilized_weights(gamma_of(Matrix::Identity(2, 2)), -0.1), Error);
}

TEST(WeightProperties, SimplexFeasibilityEverywhere) {
  CounterRng rng(derive_key(77, 1));
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index K = 2 + trial % 7;
    const GammaMatrix g = gamma_of(random_psd(rng, K));
    expect_on_simplex(plug_in_weights(g).omega);
    expect_on_simplex(ridge_weights(g, 0.01).omega);
    expect_on_simplex(stabilized_weights(g, 0.05 * rng.uniform()).omega);
  }
}

TEST(WeightProperties, StabilizedBeatsRandomFeasiblePoints) {
  CounterRng rng(derive_key(78, 1));
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index K = 2 + trial % 5;
    const Matrix G = random_psd(rng, K);
    const double d = 0.1 * rng.uniform();
    const auto w = stabilized_weights(gamma_of(G), d);
    const double bound = w.minimum_value + d;
    for (int checked = 0; checked < 1000; ++checked) {
      const auto draw = rng.simplex(static_cast<std::size_t>(K));
      Vector p = Eigen::Map<const Vector>(draw.data(), K);
      // Contract infeasible draws toward the solution until they satisfy the constraint.
      for (int halving = 0; halving < 60 && p.dot(G * p) > bound; ++halving) {
        p = 0.5 * (p + w.omega);
      }
      if (p.dot(G * p) <= bound) {
        EXPECT_LE(w.omega.squaredNorm(), p.squaredNorm() + 1e-8);
      }
    }
  }
}

TEST(WeightProperties, GridOracleEquivalence) {
  CounterRng rng(derive_key(79, 1));
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index K = 2 + trial % 3;
    const Matrix G = random_psd(rng, K);
    const double d = trial % 3 == 0 ? 0.0 : 0.1 * rng.uniform();
    const auto w = stabilized_weights(gamma_of(G), d);
    const auto oracle = grid_oracle(G, 1e-3, w.minimum_value + d);
    EXPECT_NEAR(w.minimum_value, oracle.min_value, 1e-6);
    EXPECT_LE(w.omega.norm(), oracle.min_feasible_norm + 1e-6);
  }
}

TEST(WeightProperties, ScaleEquivariance) {
  CounterRng rng(derive_key(80, 1));
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix G = random_psd(rng, 4);
    const double d = 0.05 * rng.uniform();
    for (double c : {0.01, 7.0}) {
      const auto a = stabilized_weights(gamma_of(G), d);
      const auto b = stabilized_weights(gamma_of(c * G), c * d);
      EXPECT_NEAR(b.minimum_value, c * a.minimum_value, 1e-9 * (1.0 + c));
      EXPECT_LE((a.omega - b.omega).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(WeightProperties, NormNonIncreasingInTolerance) {
  CounterRng rng(derive_key(81, 1));
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix G = random_psd(rng, 3 + trial % 4);
    double previous = std::numeric_limits<double>::infinity();
    for (double d : {0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 1.0}) {
      const double norm = stabilized_weights(gamma_of(G), d).omega.norm();
      EXPECT_LE(norm, previous + 1e-9);
      previous = norm;
    }
  }
}

TEST(SelectTolerance, Examples) {
  Matrix g = Matrix::Identity(3, 3);
  EXPECT_EQ(select_tolerance(g, g, g, 40, 0.01).d_n, 0.0);
  const auto clipped = select_tolerance(10.0 * g, g, g, 40, 0.01);
  EXPECT_GT(clipped.ratio, 1.0);
  EXPECT_DOUBLE_EQ(clipped.d_n, 0.01 * std::log(40.0));
  const auto half = select_tolerance(1.5 * g, g, g, 40, 0.01);
  EXPECT_DOUBLE_EQ(half.ratio, 0.5);
  EXPECT_NEAR(half.d_n, 0.01844, 1e-5);
  EXPECT_NEAR(half.d_n, 0.01 * std::log(40.0) * 0.5, 1e-15);
}

TEST(SelectTolerance, Errors) {
  const Matrix g = Matrix::Identity(2, 2);
  try {
    (void)select_tolerance(g, g, Matrix::Zero(2, 2), 40, 0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroGamma);
  }
  EXPECT_THROW((void)select_tolerance(g, g, g, 40, 2.0), Error);
  EXPECT_THROW((void)select_tolerance(g, g, g, 40, 0.0001), Error);
}

TEST(StabilityExperiment, FigureOneShape) {
  const std::vector<ToleranceRule> rules = {ToleranceRule::PlugIn, ToleranceRule::LogOverN,
                                            ToleranceRule::InverseLog};
  const auto pts = stability_experiment(stability_n_grid(), rules, 50);
  auto at = [&](std::size_t n, ToleranceRule r) {
    for (const auto& p : pts) {
      if (p.n == n && p.rule == r) {
        return p.median_loss;
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  EXPECT_LT(at(20000, ToleranceRule::LogOverN), 0.1);
  EXPECT_LT(at(20000, ToleranceRule::LogOverN), at(100, ToleranceRule::LogOverN));
  EXPECT_LT(at(20000, ToleranceRule::LogOverN), at(10, ToleranceRule::LogOverN));
  EXPECT_GT(at(20000, ToleranceRule::PlugIn), 0.2);
  EXPECT_GT(at(20000, ToleranceRule::InverseLog), at(20000, ToleranceRule::LogOverN));
  for (const auto& p : pts) {
    EXPECT_EQ(p.losses.size(), 50u);
  }
}

TEST(StabilityExperiment, Reproducible) {
  const auto a = stability_experiment({100}, {ToleranceRule::Adaptive}, 5, 3);
  const auto b = stability_experiment({100}, {ToleranceRule::Adaptive}, 5, 3);
  EXPECT_EQ(a[0].losses, b[0].losses);
}
