/**
 * @file ode_models.hpp
 * @brief Benchmark dynamical systems, heterogeneity schedules, RK4 integration, and
 *        noisy multi-source data generation.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "robust_ode/random.hpp"
#include "robust_ode/types.hpp"

namespace robust_ode {

enum class SystemKind { EnzymeNetwork, LotkaVolterra, Custom };
enum class HeterogeneityLevel { I = 1, II = 2, III = 3 };
enum class DesignCase { Stable, Unstable };

using ParamMap = std::map<std::string, double>;
using RhsFunction = std::function<Vector(const Vector&, double)>;

[[nodiscard]] inline const char* ToString(SystemKind kind) {
  switch (kind) {
    case SystemKind::EnzymeNetwork:
      return "enzyme";
    case SystemKind::LotkaVolterra:
      return "lv";
    case SystemKind::Custom:
      return "custom";
  }
  return "unknown";
}

[[nodiscard]] inline const char* ToString(DesignCase c) {
  return c == DesignCase::Stable ? "stable" : "unstable";
}

[[nodiscard]] inline HeterogeneityLevel level_from_int(int level) {
  if (level < 1 || level > 3) {
    throw Error(ErrorKind::UnknownLevel, "heterogeneity level must be 1, 2 or 3, got " + std::to_string(level));
  }
  return static_cast<HeterogeneityLevel>(level);
}

/** Name of the Lotka-Volterra rate alpha_{i,j}, i in 1..4, j in 1..5. */
[[nodiscard]] inline std::string lv_param_name(int i, int j) {
  return "a" + std::to_string(i) + "_" + std::to_string(j);
}

namespace detail {

[[nodiscard]] inline double param(const ParamMap& params, const std::string& name) {
  const auto it = params.find(name);
  require(it != params.end(), "missing parameter '" + name + "'");
  return it->second;
}

inline void check_finite_state(const Vector& x) {
  if (!x.allFinite()) {
    throw Error(ErrorKind::NonFiniteState, "state has a non-finite component");
  }
}

[[nodiscard]] inline double checked_denominator(double d) {
  if (!(std::abs(d) >= 1e-12)) {
    throw Error(ErrorKind::DegenerateDenominator, "Michaelis-Menten denominator below 1e-12");
  }
  return d;
}

}  // namespace detail

/** @brief Parameters of the three-node enzyme network (negative feedback with buffering node). */
struct EnzymeParams {
  double c0, c1, c2, c3, c4, c5, c6;
  double C1, C2, C3, C4, C5, C6;
  double ct1, ct2;

  [[nodiscard]] static EnzymeParams from_map(const ParamMap& m) {
    using detail::param;
    EnzymeParams p{param(m, "c0"), param(m, "c1"), param(m, "c2"), param(m, "c3"), param(m, "c4"),
                   param(m, "c5"), param(m, "c6"), param(m, "C1"), param(m, "C2"), param(m, "C3"),
                   param(m, "C4"), param(m, "C5"), param(m, "C6"), param(m, "ct1"), param(m, "ct2")};
    for (double C : {p.C1, p.C2, p.C3, p.C4, p.C5, p.C6}) {
      require(C > 0.0, "Michaelis-Menten constants must be positive");
    }
    return p;
  }
};

/** Right-hand side of the enzyme network at state x = (X1, X2, X3). */
[[nodiscard]] inline Vector enzyme_rhs(const EnzymeParams& p, const Vector& x) {
  using detail::checked_denominator;
  require(x.size() == 3, "enzyme network state must have dimension 3");
  detail::check_finite_state(x);
  const double x1 = x[0];
  const double x2 = x[1];
  const double x3 = x[2];
  Vector dx(3);
  dx[0] = p.c1 * p.c0 * (1.0 - x1) / checked_denominator((1.0 - x1) + p.C1) -
          p.ct1 * p.c2 * x1 / checked_denominator(x1 + p.C2);
  dx[1] = p.c3 * (1.0 - x2) * x3 / checked_denominator((1.0 - x2) + p.C3) -
          p.ct2 * p.c4 * x2 / checked_denominator(x2 + p.C4);
  dx[2] = p.c5 * x1 * (1.0 - x3) / checked_denominator((1.0 - x3) + p.C5) -
          p.c6 * x2 * x3 / checked_denominator(x3 + p.C6);
  return dx;
}

[[nodiscard]] inline Vector enzyme_dynamics(const ParamMap& params, const Vector& x, double /*t*/) {
  return enzyme_rhs(EnzymeParams::from_map(params), x);
}

/** @brief Rates alpha_{i,j}, stored as alpha[i-1][j-1]. */
struct LotkaVolterraParams {
  double alpha[4][5];

  [[nodiscard]] static LotkaVolterraParams from_map(const ParamMap& m) {
    LotkaVolterraParams p{};
    for (int i = 1; i <= 4; ++i) {
      for (int j = 1; j <= 5; ++j) {
        p.alpha[i - 1][j - 1] = detail::param(m, lv_param_name(i, j));
        require(p.alpha[i - 1][j - 1] > 0.0, "Lotka-Volterra rates must be positive");
      }
    }
    return p;
  }
};

/** Five decoupled predator-prey pairs; X_{2j-1} is prey, X_{2j} predator. */
[[nodiscard]] inline Vector lotka_volterra_rhs(const LotkaVolterraParams& p, const Vector& x) {
  require(x.size() == 10, "Lotka-Volterra state must have dimension 10");
  detail::check_finite_state(x);
  Vector dx(10);
  for (int j = 0; j < 5; ++j) {
    const double prey = x[2 * j];
    const double pred = x[2 * j + 1];
    dx[2 * j] = p.alpha[0][j] * prey - p.alpha[1][j] * prey * pred;
    dx[2 * j + 1] = p.alpha[2][j] * prey * pred - p.alpha[3][j] * pred;
  }
  return dx;
}

[[nodiscard]] inline Vector lotka_volterra_dynamics(const ParamMap& params, const Vector& x, double /*t*/) {
  return lotka_volterra_rhs(LotkaVolterraParams::from_map(params), x);
}

/**
 * Parameter map of source k under the given heterogeneity level. Index K+1 is allowed and
 * yields the held-out system used for generalization losses.
 */
[[nodiscard]] inline ParamMap heterogeneity_params(SystemKind kind, HeterogeneityLevel level, int k, int K) {
  require(k >= 1 && k <= K + 1, "source index must satisfy 1 <= k <= K + 1");
  const int lv = static_cast<int>(level);
  if (lv < 1 || lv > 3) {
    throw Error(ErrorKind::UnknownLevel, "unknown heterogeneity level");
  }
  ParamMap m;
  const double kk = static_cast<double>(k);
  if (kind == SystemKind::EnzymeNetwork) {
    double f = 1.0;
    double f_ct2 = 1.0;
    if (level == HeterogeneityLevel::II) {
      f = f_ct2 = 1.0 + kk / 40.0;
    } else if (level == HeterogeneityLevel::III) {
      f = 1.0 + kk / 20.0;
      f_ct2 = 1.0 + kk / 5.0;
    }
    m["c0"] = f;
    for (const char* name : {"c1", "c2", "c3", "c5", "c6"}) {
      m[name] = 10.0 * f;
    }
    m["c4"] = f;
    for (const char* name : {"C1", "C2", "C3", "C4", "C5", "C6"}) {
      m[name] = 0.1 * f;
    }
    m["ct1"] = f;
    m["ct2"] = 0.2 * f_ct2;
    return m;
  }
  if (kind == SystemKind::LotkaVolterra) {
    double f = 1.0;
    if (level == HeterogeneityLevel::II) {
      f = 1.0 + kk / 160.0;
    } else if (level == HeterogeneityLevel::III) {
      f = 1.0 + kk / 80.0;
    }
    const double base[4] = {1.1, 0.4, 0.1, 0.4};
    for (int i = 1; i <= 4; ++i) {
      for (int j = 1; j <= 5; ++j) {
        m[lv_param_name(i, j)] = (base[i - 1] + 0.2 * (j - 1)) * f;
      }
    }
    return m;
  }
  throw Error(ErrorKind::InvalidArgument, "custom systems have no heterogeneity schedule");
}

/** @brief A concrete ODE system: kind, parameters, and initial state. */
struct DynamicsSpec {
  SystemKind kind = SystemKind::EnzymeNetwork;
  ParamMap params;
  Vector initial_state;
  RhsFunction custom;  // used only when kind == Custom

  [[nodiscard]] int dimension() const {
    switch (kind) {
      case SystemKind::EnzymeNetwork:
        return 3;
      case SystemKind::LotkaVolterra:
        return 10;
      case SystemKind::Custom:
        return static_cast<int>(initial_state.size());
    }
    return 0;
  }

  /** Callable right-hand side with parameters resolved once. */
  [[nodiscard]] RhsFunction rhs() const {
    require(initial_state.size() == dimension(), "initial state dimension mismatch");
    switch (kind) {
      case SystemKind::EnzymeNetwork: {
        const EnzymeParams p = EnzymeParams::from_map(params);
        return [p](const Vector& x, double) { return enzyme_rhs(p, x); };
      }
      case SystemKind::LotkaVolterra: {
        const LotkaVolterraParams p = LotkaVolterraParams::from_map(params);
        return [p](const Vector& x, double) { return lotka_volterra_rhs(p, x); };
      }
      case SystemKind::Custom:
        require(static_cast<bool>(custom), "custom dynamics need a callable");
        return custom;
    }
    return {};
  }
};

/** @brief Integrated states and derivatives, p x n, aligned with a TimeGrid. */
struct Trajectory {
  Matrix states;
  Matrix derivatives;
};

/**
 * Classical fixed-step RK4 with `substeps` equal steps inside each grid interval.
 * Derivatives at grid times are the dynamics re-evaluated at the integrated state.
 */
template <class Rhs>
[[nodiscard]] Trajectory integrate(const Rhs& f, const Vector& x0, const TimeGrid& grid, int substeps) {
  require(substeps >= 1, "substeps must be at least 1");
  const auto& t = grid.times();
  const Eigen::Index p = x0.size();
  Trajectory out{Matrix(p, static_cast<Eigen::Index>(t.size())), Matrix(p, static_cast<Eigen::Index>(t.size()))};
  auto check = [](const Vector& x, double time) {
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e8) {
      throw Error(ErrorKind::BlowUp, "state magnitude exceeded 1e8 at t=" + std::to_string(time));
    }
  };
  Vector x = x0;
  check(x, t[0]);
  out.states.col(0) = x;
  out.derivatives.col(0) = f(x, t[0]);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double h = (t[i] - t[i - 1]) / substeps;
    double time = t[i - 1];
    for (int s = 0; s < substeps; ++s) {
      const Vector k1 = f(x, time);
      const Vector k2 = f(x + 0.5 * h * k1, time + 0.5 * h);
      const Vector k3 = f(x + 0.5 * h * k2, time + 0.5 * h);
      const Vector k4 = f(x + h * k3, time + h);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      time = t[i - 1] + (s + 1) * h;
      check(x, time);
    }
    out.states.col(static_cast<Eigen::Index>(i)) = x;
    out.derivatives.col(static_cast<Eigen::Index>(i)) = f(x, t[i]);
  }
  return out;
}

/** Substeps so that the RK4 step never exceeds max_step on this grid. */
[[nodiscard]] inline int substeps_for(const TimeGrid& grid, double max_step) {
  double widest = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    widest = std::max(widest, grid[i] - grid[i - 1]);
  }
  return std::max(1, static_cast<int>(std::ceil(widest / max_step - 1e-12)));
}

/** Default RK4 step bound, 0.01 for both systems (Lotka-Volterra changes by ~1e-3 under halving at 0.1). */
[[nodiscard]] inline double default_max_step(SystemKind /*kind*/) { return 0.01; }

/** @brief Configuration of one simulated multi-source data set. */
struct SimulationConfig {
  SystemKind system = SystemKind::EnzymeNetwork;
  int K = 5;
  HeterogeneityLevel level = HeterogeneityLevel::I;
  DesignCase design = DesignCase::Stable;
  double noise_sd = 0.01;
  TimeGrid grid = TimeGrid::uniform(40, 2.0);
  std::uint64_t seed = 1;
  int substeps = 0;  // 0 selects substeps_for(grid, default_max_step(system))

  /** Benchmark defaults: n=40, T=2, sd 0.01 (enzyme); n=200, T=100, sd 1 (Lotka-Volterra). */
  [[nodiscard]] static SimulationConfig defaults(SystemKind system) {
    SimulationConfig c;
    c.system = system;
    if (system == SystemKind::LotkaVolterra) {
      c.grid = TimeGrid::uniform(200, 100.0);
      c.noise_sd = 1.0;
    }
    return c;
  }

  [[nodiscard]] int dimension() const { return system == SystemKind::LotkaVolterra ? 10 : 3; }

  [[nodiscard]] int resolved_substeps() const {
    return substeps > 0 ? substeps : substeps_for(grid, default_max_step(system));
  }

  void validate() const {
    require(K >= 1, "K must be at least 1");
    require(design == DesignCase::Stable || K >= 2, "the unstable design needs K >= 2");
    require(noise_sd >= 0.0 && std::isfinite(noise_sd), "noise_sd must be finite and >= 0");
    require(system != SystemKind::Custom, "simulation supports the benchmark systems only");
  }
};

/** Shared initial state: 0.5 per node (enzyme) or 1 per population (Lotka-Volterra). */
[[nodiscard]] inline Vector default_initial_state(SystemKind kind) {
  return kind == SystemKind::LotkaVolterra ? Vector::Ones(10) : Vector::Constant(3, 0.5);
}

[[nodiscard]] inline DynamicsSpec benchmark_system(SystemKind kind, HeterogeneityLevel level, int k, int K) {
  DynamicsSpec spec;
  spec.kind = kind;
  spec.params = heterogeneity_params(kind, level, k, K);
  spec.initial_state = default_initial_state(kind);
  return spec;
}

/** @brief One source: its observation grid, p x n observations, optional latent truth. */
struct Source {
  TimeGrid grid;
  Matrix y;
  std::optional<Matrix> latent_states;
  std::optional<Matrix> latent_derivatives;
  std::vector<int> trial;  // optional trial ids per time point (external data only)

  [[nodiscard]] int dimension() const { return static_cast<int>(y.rows()); }
  [[nodiscard]] std::size_t n() const { return grid.size(); }
};

/** @brief K independent sources; the Y^(k)(t_i) array plus simulation-only truth. */
struct SourceObservations {
  std::vector<Source> sources;
  std::vector<double> combination_weights;  // unstable design: weights of sources 1..K-1 in source K

  [[nodiscard]] int K() const { return static_cast<int>(sources.size()); }
  [[nodiscard]] int dimension() const { return sources.empty() ? 0 : sources.front().dimension(); }

  [[nodiscard]] bool shared_grid() const {
    for (const auto& s : sources) {
      if (!(s.grid == sources.front().grid)) {
        return false;
      }
    }
    return true;
  }

  void validate() const {
    require(!sources.empty(), "no sources");
    for (const auto& s : sources) {
      require(s.y.rows() == dimension(), "sources disagree on dimension", ErrorKind::HeaderMismatch);
      require(s.y.cols() == static_cast<Eigen::Index>(s.grid.size()), "observation count does not match grid");
      require(s.y.allFinite(), "observations must be finite");
    }
  }
};

/** Latent (noise-free) trajectory of source k under a simulation config. */
[[nodiscard]] inline Trajectory simulate_latent(const SimulationConfig& config, int k) {
  const DynamicsSpec spec = benchmark_system(config.system, config.level, k, config.K);
  return integrate(spec.rhs(), spec.initial_state, config.grid, config.resolved_substeps());
}

namespace detail {
inline constexpr std::uint64_t kWeightStream = 0xFFFF0000ULL;
}  // namespace detail

/**
 * Noisy multi-source data for a simulation config.
 *
 * Stable design: source k integrates heterogeneity_params(level, k). Unstable design:
 * sources 1..K-1 as in the stable design; source K's latent states and derivatives are a
 * convex combination of theirs with weights uniform on the simplex. Noise for source k
 * comes from stream k of the seed.
 */
[[nodiscard]] inline SourceObservations generate_sources(const SimulationConfig& config) {
  config.validate();
  SourceObservations obs;
  const int K = config.K;
  const int integrated = config.design == DesignCase::Stable ? K : K - 1;
  std::vector<Trajectory> latent;
  latent.reserve(static_cast<std::size_t>(K));
  for (int k = 1; k <= integrated; ++k) {
    latent.push_back(simulate_latent(config, k));
  }
  if (config.design == DesignCase::Unstable) {
    CounterRng wrng(derive_key(config.seed, detail::kWeightStream));
    obs.combination_weights = wrng.simplex(static_cast<std::size_t>(K - 1));
    Trajectory mix{Matrix::Zero(latent[0].states.rows(), latent[0].states.cols()),
                   Matrix::Zero(latent[0].states.rows(), latent[0].states.cols())};
    for (int k = 0; k < K - 1; ++k) {
      mix.states += obs.combination_weights[static_cast<std::size_t>(k)] * latent[static_cast<std::size_t>(k)].states;
      mix.derivatives +=
          obs.combination_weights[static_cast<std::size_t>(k)] * latent[static_cast<std::size_t>(k)].derivatives;
    }
    latent.push_back(std::move(mix));
  }
  for (int k = 0; k < K; ++k) {
    CounterRng rng(derive_key(config.seed, static_cast<std::uint64_t>(k + 1)));
    Source s;
    s.grid = config.grid;
    s.y = latent[static_cast<std::size_t>(k)].states;
    if (config.noise_sd > 0.0) {
      for (Eigen::Index i = 0; i < s.y.cols(); ++i) {
        for (Eigen::Index j = 0; j < s.y.rows(); ++j) {
          s.y(j, i) += config.noise_sd * rng.normal();
        }
      }
    }
    s.latent_states = latent[static_cast<std::size_t>(k)].states;
    s.latent_derivatives = latent[static_cast<std::size_t>(k)].derivatives;
    obs.sources.push_back(std::move(s));
  }
  return obs;
}

/** Latent truth of the held-out system (index K+1, stable schedule) for generalization losses. */
[[nodiscard]] inline Source generate_heldout(const SimulationConfig& config) {
  config.validate();
  Trajectory tr = simulate_latent(config, config.K + 1);
  Source s;
  s.grid = config.grid;
  s.y = tr.states;
  s.latent_states = std::move(tr.states);
  s.latent_derivatives = std::move(tr.derivatives);
  return s;
}

/** True when every source starts from the same observed initial state (within tol). */
[[nodiscard]] inline bool shared_initial_state(const SourceObservations& obs, double tol) {
  for (const auto& s : obs.sources) {
    if ((s.y.col(0) - obs.sources.front().y.col(0)).cwiseAbs().maxCoeff() > tol) {
      return false;
    }
  }
  return true;
}

}  // namespace robust_ode
