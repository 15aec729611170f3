#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "robust_ode/ode_models.hpp"
#include "robust_ode/parallel.hpp"

using namespace robust_ode;

namespace {

ParamMap enzyme_level1() { return heterogeneity_params(SystemKind::EnzymeNetwork, HeterogeneityLevel::I, 1, 5); }
ParamMap lv_level1() { return heterogeneity_params(SystemKind::LotkaVolterra, HeterogeneityLevel::I, 1, 5); }

}  // namespace

TEST(TimeGrid, UniformIncludesEndpoints) {
  const TimeGrid g = TimeGrid::uniform(5, 2.0);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[4], 2.0);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
}

TEST(TimeGrid, RejectsNonMonotoneAndShortGrids) {
  try {
    TimeGrid({0.0, 0.5, 0.4}, 1.0);
    FAIL() << "expected NonMonotoneTime";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonMonotoneTime);
  }
  EXPECT_THROW(TimeGrid::uniform(1, 1.0), Error);
  EXPECT_THROW(TimeGrid({0.0, 2.0}, 1.0), Error);
}

TEST(EnzymeDynamics, LevelOneRhsAtHalf) {
  // Independent evaluation: (10*0.5/0.6 - 10*0.5/0.6, 10*0.25/0.6 - 0.2*0.5/0.6, 10*0.25/0.6 - 10*0.25/0.6).
  const Vector dx = enzyme_dynamics(enzyme_level1(), Vector::Constant(3, 0.5), 0.0);
  EXPECT_NEAR(dx[0], 0.0, 1e-12);
  EXPECT_NEAR(dx[1], 4.0, 1e-12);
  EXPECT_NEAR(dx[2], 0.0, 1e-12);
}

TEST(EnzymeDynamics, DegenerateDenominator) {
  ParamMap p = enzyme_level1();
  p["C2"] = 1e-13;
  Vector x(3);
  x << -1e-13 + 1e-15, 0.5, 0.5;
  try {
    (void)enzyme_dynamics(p, x, 0.0);
    FAIL() << "expected DegenerateDenominator";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateDenominator);
  }
}

TEST(EnzymeDynamics, NonFiniteState) {
  Vector x = Vector::Constant(3, 0.5);
  x[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)enzyme_dynamics(enzyme_level1(), x, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteState);
  }
}

TEST(EnzymeDynamics, RejectsNonPositiveConstants) {
  ParamMap p = enzyme_level1();
  p["C4"] = 0.0;
  EXPECT_THROW((void)enzyme_dynamics(p, Vector::Constant(3, 0.5), 0.0), Error);
}

TEST(LotkaVolterraDynamics, LevelOneHandValues) {
  const Vector dx = lotka_volterra_dynamics(lv_level1(), Vector::Ones(10), 0.0);
  EXPECT_NEAR(dx[0], 0.7, 1e-12);
  EXPECT_NEAR(dx[1], -0.3, 1e-12);
  EXPECT_NEAR(dx[8], 0.7, 1e-12);
}

TEST(LotkaVolterraDynamics, ZeroIsEquilibrium) {
  const Vector dx = lotka_volterra_dynamics(lv_level1(), Vector::Zero(10), 0.0);
  EXPECT_EQ(dx.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LotkaVolterraDynamics, NonFiniteState) {
  Vector x = Vector::Ones(10);
  x[7] = std::numeric_limits<double>::infinity();
  EXPECT_THROW((void)lotka_volterra_dynamics(lv_level1(), x, 0.0), Error);
}

TEST(HeterogeneityParams, EnzymeLevelOne) {
  const ParamMap p = enzyme_level1();
  EXPECT_DOUBLE_EQ(p.at("c0"), 1.0);
  EXPECT_DOUBLE_EQ(p.at("c4"), 1.0);
  EXPECT_DOUBLE_EQ(p.at("ct2"), 0.2);
  EXPECT_DOUBLE_EQ(p.at("c3"), 10.0);
  for (const char* C : {"C1", "C2", "C3", "C4", "C5", "C6"}) {
    EXPECT_DOUBLE_EQ(p.at(C), 0.1);
  }
}

TEST(HeterogeneityParams, EnzymeLevelTwo) {
  const ParamMap p = heterogeneity_params(SystemKind::EnzymeNetwork, HeterogeneityLevel::II, 4, 5);
  EXPECT_DOUBLE_EQ(p.at("c0"), 1.1);
  EXPECT_DOUBLE_EQ(p.at("C3"), 0.11);
}

TEST(HeterogeneityParams, LotkaVolterraLevelThree) {
  const ParamMap p = heterogeneity_params(SystemKind::LotkaVolterra, HeterogeneityLevel::III, 8, 10);
  EXPECT_DOUBLE_EQ(p.at(lv_param_name(1, 1)), 1.1 * (1.0 + 8.0 / 80.0));
}

TEST(HeterogeneityParams, Errors) {
  EXPECT_THROW((void)level_from_int(4), Error);
  try {
    (void)level_from_int(0);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownLevel);
  }
  EXPECT_THROW((void)heterogeneity_params(SystemKind::EnzymeNetwork, HeterogeneityLevel::I, 0, 5), Error);
  EXPECT_THROW((void)heterogeneity_params(SystemKind::EnzymeNetwork, HeterogeneityLevel::I, 7, 5), Error);
}

TEST(Integrate, ExponentialDecay) {
  const TimeGrid g = TimeGrid::uniform(2, 1.0);
  const auto tr = integrate([](const Vector& x, double) -> Vector { return -x; }, Vector::Ones(1), g, 1000);
  EXPECT_NEAR(tr.states(0, 1), std::exp(-1.0), 1e-8);
  EXPECT_NEAR(tr.derivatives(0, 1), -std::exp(-1.0), 1e-8);
}

TEST(Integrate, ZeroDynamicsIsConstant) {
  const TimeGrid g = TimeGrid::uniform(11, 3.0);
  Vector x0(2);
  x0 << 0.3, -2.0;
  const auto tr = integrate([](const Vector& x, double) -> Vector { return Vector::Zero(x.size()); }, x0, g, 4);
  for (Eigen::Index i = 0; i < tr.states.cols(); ++i) {
    EXPECT_EQ(tr.states.col(i), x0);
  }
}

TEST(Integrate, BlowUp) {
  const TimeGrid g = TimeGrid::uniform(3, 10.0);
  try {
    (void)integrate([](const Vector& x, double) -> Vector { return (x.array() * x.array()).matrix(); },
                    Vector::Ones(1), g, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BlowUp);
  }
}

TEST(Integrate, SubstepsMustBePositive) {
  EXPECT_THROW((void)integrate([](const Vector& x, double) { return x; }, Vector::Ones(1), TimeGrid::uniform(3, 1.0), 0),
               Error);
}

class StepHalving : public ::testing::TestWithParam<SystemKind> {};

TEST_P(StepHalving, DoubledSubstepsChangeLessThanTolerance) {
  SimulationConfig c = SimulationConfig::defaults(GetParam());
  const DynamicsSpec spec = benchmark_system(c.system, HeterogeneityLevel::I, 1, c.K);
  const int s = c.resolved_substeps();
  const auto a = integrate(spec.rhs(), spec.initial_state, c.grid, s);
  const auto b = integrate(spec.rhs(), spec.initial_state, c.grid, 2 * s);
  EXPECT_LT((a.states - b.states).cwiseAbs().maxCoeff(), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Benchmarks, StepHalving,
                         ::testing::Values(SystemKind::EnzymeNetwork, SystemKind::LotkaVolterra));

TEST(GenerateSources, Defaults) {
  const SimulationConfig e = SimulationConfig::defaults(SystemKind::EnzymeNetwork);
  EXPECT_EQ(e.grid.size(), 40u);
  EXPECT_DOUBLE_EQ(e.grid.horizon(), 2.0);
  EXPECT_DOUBLE_EQ(e.noise_sd, 0.01);
  EXPECT_EQ(e.dimension(), 3);
  EXPECT_EQ(default_initial_state(SystemKind::EnzymeNetwork), Vector::Constant(3, 0.5));
  const SimulationConfig l = SimulationConfig::defaults(SystemKind::LotkaVolterra);
  EXPECT_EQ(l.grid.size(), 200u);
  EXPECT_DOUBLE_EQ(l.grid.horizon(), 100.0);
  EXPECT_DOUBLE_EQ(l.noise_sd, 1.0);
  EXPECT_EQ(l.dimension(), 10);
  EXPECT_EQ(default_initial_state(SystemKind::LotkaVolterra), Vector::Ones(10));
}

TEST(GenerateSources, ZeroNoiseReproducesIntegrator) {
  SimulationConfig c;
  c.K = 2;
  c.noise_sd = 0.0;
  const auto obs = generate_sources(c);
  ASSERT_EQ(obs.K(), 2);
  for (int k = 0; k < 2; ++k) {
    const auto tr = simulate_latent(c, k + 1);
    EXPECT_EQ(obs.sources[static_cast<std::size_t>(k)].y, tr.states);
    EXPECT_EQ(*obs.sources[static_cast<std::size_t>(k)].latent_derivatives, tr.derivatives);
  }
  // Level I: both sources share parameters, so their observations coincide.
  EXPECT_EQ(obs.sources[0].y, obs.sources[1].y);
}

TEST(GenerateSources, SameSeedBitwiseIdenticalAcrossThreadCounts) {
  SimulationConfig c;
  c.level = HeterogeneityLevel::III;
  c.design = DesignCase::Unstable;
  std::vector<SourceObservations> serial(6);
  std::vector<SourceObservations> threaded(6);
  auto run = [&](std::vector<SourceObservations>& out, unsigned threads) {
    parallel_for(out.size(), threads, [&](std::size_t i) {
      SimulationConfig ci = c;
      ci.seed = 100 + i;
      out[i] = generate_sources(ci);
    });
  };
  run(serial, 1);
  run(threaded, 4);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    ASSERT_EQ(serial[i].K(), threaded[i].K());
    EXPECT_EQ(serial[i].combination_weights, threaded[i].combination_weights);
    for (int k = 0; k < serial[i].K(); ++k) {
      EXPECT_EQ(serial[i].sources[static_cast<std::size_t>(k)].y, threaded[i].sources[static_cast<std::size_t>(k)].y);
    }
  }
  SimulationConfig other = c;
  other.seed = 999;
  EXPECT_NE(generate_sources(other).sources[0].y, serial[0].sources[0].y);
}

TEST(GenerateSources, UnstableSourceIsStoredCombination) {
  SimulationConfig c;
  c.level = HeterogeneityLevel::III;
  c.design = DesignCase::Unstable;
  c.seed = 17;
  const auto obs = generate_sources(c);
  ASSERT_EQ(obs.combination_weights.size(), 4u);
  double total = 0.0;
  for (double w : obs.combination_weights) {
    EXPECT_GE(w, 0.0);
    total += w;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  Matrix mix = Matrix::Zero(3, 40);
  for (int k = 0; k < 4; ++k) {
    mix += obs.combination_weights[static_cast<std::size_t>(k)] *
           *obs.sources[static_cast<std::size_t>(k)].latent_derivatives;
  }
  EXPECT_LT((mix - *obs.sources[4].latent_derivatives).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GenerateSources, ConfigValidation) {
  SimulationConfig c;
  c.K = 1;
  c.design = DesignCase::Unstable;
  EXPECT_THROW((void)generate_sources(c), Error);
  c.K = 0;
  c.design = DesignCase::Stable;
  EXPECT_THROW((void)generate_sources(c), Error);
  c.K = 2;
  c.noise_sd = -1.0;
  EXPECT_THROW((void)generate_sources(c), Error);
}

TEST(GenerateSources, SharedInitialStateWithoutNoise) {
  SimulationConfig c;
  c.level = HeterogeneityLevel::III;
  c.noise_sd = 0.0;
  EXPECT_TRUE(shared_initial_state(generate_sources(c), 1e-12));
}

TEST(GenerateSources, HeldoutUsesNextIndex) {
  SimulationConfig c;
  c.level = HeterogeneityLevel::III;
  const Source h = generate_heldout(c);
  EXPECT_EQ(h.y, simulate_latent(c, c.K + 1).states);
}
