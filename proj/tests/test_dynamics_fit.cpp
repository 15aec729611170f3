#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "robust_ode/dynamics_fit.hpp"
#include "robust_ode/pipeline.hpp"

using namespace robust_ode;

namespace {

struct Sample {
  Matrix states;  // m x p
  Matrix derivs;  // m x p
  std::vector<double> times;
};

Sample random_sample(CounterRng& rng, Eigen::Index m, Eigen::Index p) {
  Sample s{Matrix(m, p), Matrix(m, p), std::vector<double>(static_cast<std::size_t>(m))};
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      s.states(i, j) = rng.normal();
      s.derivs(i, j) = std::sin(s.states(i, j)) + 0.1 * rng.normal();
    }
    s.times[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(m);
  }
  return s;
}

/** Damped rotation dX/dt = A X with A = [[-0.2, 1], [-1, -0.2]]; returns p x n arrays. */
Trajectory spiral(const TimeGrid& g) {
  Matrix A(2, 2);
  A << -0.2, 1.0, -1.0, -0.2;
  return integrate([&](const Vector& x, double) { return Vector(A * x); }, Vector::Unit(2, 0), g, 10);
}

Matrix training_residual(const FittedDynamics& f, const Sample& s) {
  return predict_trajectory(f, s.states.transpose(), s.times).transpose() - s.derivs;
}

}  // namespace

TEST(GradientMatching, ZeroTargetsPredictZero) {
  CounterRng rng(derive_key(1, 1));
  const Sample s = random_sample(rng, 30, 3);
  const FittedDynamics f = fit_gradient_matching(s.states, Matrix::Zero(30, 3), s.times, 1.0, 1e-3);
  for (int q = 0; q < 10; ++q) {
    const Vector x = Vector::Random(3);
    EXPECT_EQ(predict_derivative(f, x, 0.0), Vector::Zero(3));
  }
}

TEST(GradientMatching, InterpolatesAsRidgeVanishes) {
  CounterRng rng(derive_key(1, 2));
  const Sample s = random_sample(rng, 12, 2);
  const FittedDynamics f = fit_gradient_matching(s.states, s.derivs, s.times, 0.5, 1e-12);
  for (Eigen::Index i = 0; i < 12; ++i) {
    const Vector pred = predict_derivative(f, s.states.row(i).transpose(), s.times[static_cast<std::size_t>(i)]);
    EXPECT_LE((pred - s.derivs.row(i).transpose()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(GradientMatching, LinearSystemHeldOut) {
  const TimeGrid train = TimeGrid::uniform(201, 8.0);
  const Trajectory tr = spiral(train);
  std::vector<double> mid;
  for (std::size_t i = 0; i + 1 < train.size(); ++i) {
    mid.push_back(0.5 * (train[i] + train[i + 1]));
  }
  const Trajectory te = spiral(TimeGrid(mid, 8.0));
  KernelParams kp;
  kp.cross_validate = true;
  const FittedDynamics f = fit_dynamics(tr.states, tr.derivatives, train.times(), 8.0, kp);
  const Matrix pred = predict_trajectory(f, te.states, mid);
  const double rmse = std::sqrt((pred - te.derivatives).squaredNorm() / static_cast<double>(pred.size()));
  const double rms = std::sqrt(te.derivatives.squaredNorm() / static_cast<double>(pred.size()));
  EXPECT_LT(rmse, 0.05 * rms);
}

TEST(GradientMatching, TranslationAndScaling) {
  CounterRng rng(derive_key(1, 3));
  const Sample s = random_sample(rng, 25, 2);
  const FittedDynamics base = fit_gradient_matching(s.states, s.derivs, s.times, 0.8, 1e-2);
  const Vector shift = (Vector(2) << 3.0, -1.25).finished();
  const FittedDynamics shifted =
      fit_gradient_matching(s.states, s.derivs.rowwise() + shift.transpose(), s.times, 0.8, 1e-2);
  const FittedDynamics scaled = fit_gradient_matching(s.states, -2.5 * s.derivs, s.times, 0.8, 1e-2);
  for (int q = 0; q < 20; ++q) {
    const Vector x = 2.0 * Vector::Random(2);
    const Vector p0 = predict_derivative(base, x, 0.0);
    EXPECT_LE((predict_derivative(shifted, x, 0.0) - (p0 + shift)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((predict_derivative(scaled, x, 0.0) + 2.5 * p0).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GradientMatching, PermutationInvariant) {
  CounterRng rng(derive_key(1, 4));
  const Sample s = random_sample(rng, 40, 3);
  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[17]);
  Sample t{Matrix(40, 3), Matrix(40, 3), std::vector<double>(40)};
  for (Eigen::Index i = 0; i < 40; ++i) {
    t.states.row(i) = s.states.row(perm[static_cast<std::size_t>(i)]);
    t.derivs.row(i) = s.derivs.row(perm[static_cast<std::size_t>(i)]);
    t.times[static_cast<std::size_t>(i)] = s.times[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const FittedDynamics a = fit_gradient_matching(s.states, s.derivs, s.times, 1.0, 1e-2, true, 1.0);
  const FittedDynamics b = fit_gradient_matching(t.states, t.derivs, t.times, 1.0, 1e-2, true, 1.0);
  for (int q = 0; q < 20; ++q) {
    const Vector x = Vector::Random(3);
    EXPECT_LE((predict_derivative(a, x, 0.3) - predict_derivative(b, x, 0.3)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GradientMatching, TrainingResidualGrowsWithRidge) {
  CounterRng rng(derive_key(1, 5));
  const Sample s = random_sample(rng, 30, 2);
  double previous = 0.0;
  for (double ridge : {1e-6, 1e-4, 1e-2, 1e-1, 1.0, 10.0}) {
    const double r = training_residual(fit_gradient_matching(s.states, s.derivs, s.times, 0.7, ridge), s).norm();
    EXPECT_GE(r, previous - 1e-10);
    previous = r;
  }
}

TEST(GradientMatching, Errors) {
  CounterRng rng(derive_key(1, 6));
  Sample s = random_sample(rng, 5, 2);
  EXPECT_THROW((void)fit_gradient_matching(s.states.topRows(1), s.derivs.topRows(1), s.times, 1.0, 0.1), Error);
  EXPECT_THROW((void)fit_gradient_matching(s.states, s.derivs, s.times, 0.0, 0.1), Error);
  EXPECT_THROW((void)fit_gradient_matching(s.states, s.derivs, s.times, 1.0, -1.0), Error);
  s.states.row(1) = s.states.row(0);
  try {
    (void)fit_gradient_matching(s.states, s.derivs, s.times, 1.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularSystem);
  }
}

TEST(GradientMatching, TimeInput) {
  CounterRng rng(derive_key(1, 7));
  const Sample s = random_sample(rng, 20, 2);
  const FittedDynamics f = fit_gradient_matching(s.states, s.derivs, s.times, 1.0, 1e-3, true, 2.0);
  EXPECT_EQ(f.centers.cols(), 3);
  EXPECT_DOUBLE_EQ(f.centers(4, 2), s.times[4] / 2.0);
  const Vector x = s.states.row(0).transpose();
  EXPECT_NE(predict_derivative(f, x, 0.0)[0], predict_derivative(f, x, 1.5)[0]);
}

TEST(MedianPairwiseDistance, Examples) {
  Matrix z(3, 1);
  z << 0.0, 1.0, 3.0;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(z), 2.0);
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Matrix::Zero(4, 2)), 1.0);
}

TEST(FitErm, SingleSourceMatchesDirectFit) {
  SimulationConfig c;
  c.K = 1;
  const auto obs = generate_sources(c);
  SmoothingConfig sc;
  sc.h = 0.3;
  const SmoothedSource sm = smooth_source(obs.sources[0].grid, obs.sources[0].y, obs.sources[0].grid, sc);
  const KernelParams kp;
  const FittedDynamics erm = fit_erm({sm}, kp);
  const FittedDynamics direct = fit_dynamics(sm.x_hat, sm.d_hat, sm.eval_grid.times(), sm.eval_grid.horizon(), kp);
  EXPECT_EQ(erm.coefficients, direct.coefficients);
  EXPECT_EQ(erm.kernel_bandwidth, direct.kernel_bandwidth);
}

TEST(FitErm, DuplicatedSourceMatchesSingle) {
  SimulationConfig c;
  c.K = 1;
  const auto obs = generate_sources(c);
  SmoothingConfig sc;
  sc.h = 0.3;
  const SmoothedSource sm = smooth_source(obs.sources[0].grid, obs.sources[0].y, obs.sources[0].grid, sc);
  KernelParams kp;
  kp.bandwidth = 0.2;
  const FittedDynamics one = fit_erm({sm}, kp);
  const FittedDynamics two = fit_erm({sm, sm}, kp);
  EXPECT_DOUBLE_EQ(two.ridge, 2.0 * one.ridge);
  const Matrix q = sm.x_hat;
  EXPECT_LE((predict_trajectory(one, q, sm.eval_grid.times()) - predict_trajectory(two, q, sm.eval_grid.times()))
                .cwiseAbs()
                .maxCoeff(),
            1e-8);
}

TEST(FitDynamics, ExampleOneSmoke) {
  SimulationConfig c;
  const auto obs = generate_sources(c);
  PipelineOptions o;
  const PipelineResult r = run_estimation(obs, o);
  ASSERT_TRUE(r.dynamics.has_value());
  const TimeGrid q = TimeGrid::uniform(100, 2.0);
  const Trajectory truth = simulate_latent(c, 1);
  Matrix states(3, 100);
  for (Eigen::Index i = 0; i < 100; ++i) {
    states.col(i) = truth.states.col(std::min<Eigen::Index>(i * 40 / 100, 39));
  }
  EXPECT_TRUE(predict_trajectory(*r.dynamics, states, q.times()).allFinite());
}
