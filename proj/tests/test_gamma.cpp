#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "robust_ode/gamma.hpp"

using namespace robust_ode;

namespace {

SmoothedSource from_derivatives(const Matrix& d, const TimeGrid& g) {
  SmoothedSource s;
  s.x_hat = Matrix::Zero(d.rows(), d.cols());
  s.d_hat = d;
  s.sigma_hat = Matrix::Zero(d.rows(), d.cols());
  s.eval_grid = g;
  s.n_obs = g.size();
  return s;
}

Matrix curve(const TimeGrid& g, double (*f)(double), int p = 1) {
  Matrix d(p, static_cast<Eigen::Index>(g.size()));
  for (int j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      d(j, static_cast<Eigen::Index>(i)) = f(g[i]) * (j + 1);
    }
  }
  return d;
}

std::vector<SmoothedSource> smooth_all(const SourceObservations& obs, double h) {
  SmoothingConfig c;
  c.h = h;
  std::vector<SmoothedSource> out;
  for (const auto& s : obs.sources) {
    out.push_back(smooth_source(s.grid, s.y, s.grid, c));
  }
  return out;
}

double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> e(m);
  return e.eigenvalues().minCoeff();
}

double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> e(m);
  return e.eigenvalues().maxCoeff();
}

}  // namespace

TEST(EstimateGamma, IdenticalCurvesGiveRankOne) {
  const TimeGrid g = TimeGrid::uniform(101, 1.0);
  const Matrix d = curve(g, [](double t) { return 1.0 + t; }, 2);
  const GammaMatrix gm = estimate_gamma({from_derivatives(d, g), from_derivatives(d, g)}, 0.0);
  // Sum over j of trapezoid integral of (j+1)^2 (1+t)^2.
  std::vector<double> sq(101);
  for (std::size_t i = 0; i < 101; ++i) {
    sq[i] = 5.0 * (1.0 + g[i]) * (1.0 + g[i]);
  }
  const double c = trapezoid(g.times(), sq);
  EXPECT_NEAR(c, 5.0 * 7.0 / 3.0, 1e-3);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      EXPECT_NEAR(gm.entries(a, b), c, 1e-12);
    }
  }
}

TEST(EstimateGamma, SinCosOrthogonal) {
  const TimeGrid g = TimeGrid::uniform(4001, 2.0 * std::numbers::pi);
  const GammaMatrix gm = estimate_gamma(
      {from_derivatives(curve(g, [](double t) { return std::sin(t); }), g),
       from_derivatives(curve(g, [](double t) { return std::cos(t); }), g)},
      0.0);
  EXPECT_NEAR(gm.entries(0, 1), 0.0, 1e-4);
  EXPECT_NEAR(gm.entries(0, 0), std::numbers::pi, 1e-4);
}

TEST(EstimateGamma, SingleSourceIsEnergy) {
  const TimeGrid g = TimeGrid::uniform(11, 1.0);
  const Matrix d = Matrix::Constant(3, 11, 2.0);
  const GammaMatrix gm = estimate_gamma({from_derivatives(d, g)}, 0.0);
  ASSERT_EQ(gm.K(), 1);
  EXPECT_NEAR(gm.entries(0, 0), 12.0, 1e-12);
}

TEST(EstimateGamma, TrimRestrictsDomain) {
  const TimeGrid g = TimeGrid::uniform(101, 1.0);
  const GammaMatrix gm = estimate_gamma({from_derivatives(Matrix::Ones(1, 101), g)}, 0.1);
  EXPECT_NEAR(gm.entries(0, 0), 0.8, 1e-12);
  EXPECT_EQ(gm.trim, 0.1);
  EXPECT_THROW((void)estimate_gamma({from_derivatives(Matrix::Ones(1, 101), g)}, 0.3), Error);
}

TEST(EstimateGamma, GridMismatch) {
  const TimeGrid a = TimeGrid::uniform(11, 1.0);
  const TimeGrid b = TimeGrid::uniform(12, 1.0);
  try {
    (void)estimate_gamma({from_derivatives(Matrix::Ones(1, 11), a), from_derivatives(Matrix::Ones(1, 12), b)}, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GridMismatch);
  }
}

TEST(GammaProperties, SymmetricPsdPermutationAndScaling) {
  SimulationConfig c;
  c.level = HeterogeneityLevel::III;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    c.seed = seed;
    const auto sm = smooth_all(generate_sources(c), 0.25);
    const GammaMatrix gm = estimate_gamma(sm, 0.05);
    EXPECT_LE((gm.entries - gm.entries.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(min_eigenvalue(gm.entries), -1e-8 * max_eigenvalue(gm.entries));
    EXPECT_GE(min_eigenvalue(gm.floored), -1e-10);

    // Permutation equivariance: reverse source order.
    std::vector<SmoothedSource> rev(sm.rbegin(), sm.rend());
    const GammaMatrix gr = estimate_gamma(rev, 0.05);
    const auto K = gm.K();
    for (Eigen::Index a = 0; a < K; ++a) {
      for (Eigen::Index b = 0; b < K; ++b) {
        EXPECT_DOUBLE_EQ(gr.entries(a, b), gm.entries(K - 1 - a, K - 1 - b));
      }
    }

    // Scaling every derivative curve by c scales Gamma by c^2.
    std::vector<SmoothedSource> scaled = sm;
    for (auto& s : scaled) {
      s.d_hat *= -3.0;
    }
    EXPECT_LE((estimate_gamma(scaled, 0.05).entries - 9.0 * gm.entries).cwiseAbs().maxCoeff(),
              1e-10 * gm.entries.cwiseAbs().maxCoeff());
  }
}

TEST(GammaProperties, FloorClipsNegativeEigenvalues) {
  Matrix raw(2, 2);
  raw << 1.0, 2.0, 2.0, 1.0;
  const GammaMatrix g = make_gamma(raw, 0.0);
  EXPECT_TRUE(g.psd_floor_applied);
  EXPECT_NEAR(min_eigenvalue(g.floored), 0.0, 1e-12);
  EXPECT_NEAR(max_eigenvalue(g.floored), 3.0, 1e-12);
  EXPECT_EQ(g.entries, raw);
}

TEST(GammaProperties, ConvergesToOracle) {
  auto median_error = [](std::size_t n) {
    std::vector<double> e;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      SimulationConfig c;
      c.grid = TimeGrid::uniform(n, 2.0);
      c.seed = seed;
      const auto obs = generate_sources(c);
      const double h = 0.15 * std::pow(static_cast<double>(n) / 40.0, -0.2);
      e.push_back((estimate_gamma(smooth_all(obs, h), 0.05).entries - latent_gamma(obs, 0.05).entries).norm());
    }
    std::sort(e.begin(), e.end());
    return 0.5 * (e[24] + e[25]);
  };
  EXPECT_LT(median_error(160), median_error(40));
}

TEST(SplitGamma, ZeroNoiseHalvesAgree) {
  // With 20 points per half the initial transient on [0, 0.4] is under-resolved, so the
  // default grid only gets within 10% of ||Gamma||; a 200-point grid reaches 1e-2.
  SimulationConfig c;
  c.noise_sd = 0.0;
  SmoothingConfig sc;
  sc.h = 0.3;
  auto obs = generate_sources(c);
  auto [a, b] = split_gamma(obs, c.grid, sc, 0.05);
  EXPECT_LE(operator_norm(a.entries - b.entries), 0.1 * operator_norm(a.entries));
  c.grid = TimeGrid::uniform(200, 2.0);
  sc.h = 0.1;
  obs = generate_sources(c);
  std::tie(a, b) = split_gamma(obs, c.grid, sc, 0.05);
  EXPECT_LE(operator_norm(a.entries - b.entries), 1e-2);
}

TEST(SplitGamma, HalfSizes) {
  const auto [a, b] = interleaved_halves(41);
  EXPECT_EQ(a.size(), 21u);
  EXPECT_EQ(b.size(), 20u);
  EXPECT_EQ(a.front(), 0u);
  EXPECT_EQ(b.front(), 1u);
}

TEST(SplitGamma, DuplicatedSourcesRankDeficient) {
  SimulationConfig c;
  c.K = 1;
  c.seed = 4;
  auto obs = generate_sources(c);
  obs.sources.push_back(obs.sources.front());
  SmoothingConfig sc;
  sc.h = 0.3;
  const auto [a, b] = split_gamma(obs, c.grid, sc, 0.05);
  for (const auto* g : {&a, &b}) {
    EXPECT_LE(min_eigenvalue(g->entries), 1e-6 * max_eigenvalue(g->entries));
  }
}

TEST(SplitGamma, NeedsSixteenPoints) {
  SimulationConfig c;
  c.grid = TimeGrid::uniform(15, 2.0);
  SmoothingConfig sc;
  sc.h = 0.5;
  EXPECT_THROW((void)split_gamma(generate_sources(c), c.grid, sc, 0.05), Error);
}

TEST(OperatorNorm, LargestAbsoluteEigenvalue) {
  Matrix m(2, 2);
  m << 1.0, 0.0, 0.0, -4.0;
  EXPECT_DOUBLE_EQ(operator_norm(m), 4.0);
}
