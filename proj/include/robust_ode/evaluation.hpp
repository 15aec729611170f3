/**
 * @file evaluation.hpp
 * @brief Loss metrics, replicated benchmark and coverage experiments, and the
 *        leave-one-subject-out protocol.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "robust_ode/dynamics_fit.hpp"
#include "robust_ode/ode_models.hpp"
#include "robust_ode/parallel.hpp"
#include "robust_ode/pipeline.hpp"

namespace robust_ode {

/** int sum_j (D_t X_j(t) - F_j(X(t), t))^2 dt by the trapezoid rule; arrays are p x n. */
[[nodiscard]] inline double trajectory_loss(const FittedDynamics& f, const Matrix& states, const Matrix& derivatives,
                                            const TimeGrid& grid) {
  require(states.cols() == static_cast<Eigen::Index>(grid.size()) && derivatives.cols() == states.cols() &&
              derivatives.rows() == states.rows(),
          "trajectory arrays do not match the grid", ErrorKind::GridMismatch);
  const Matrix pred = predict_trajectory(f, states, grid.times());
  const Vector sq = (derivatives - pred).colwise().squaredNorm().transpose();
  return trapezoid(grid.times(), sq);
}

/** Total derivative energy sum_j int (D_t X_j)^2 dt. */
[[nodiscard]] inline double derivative_energy(const Matrix& derivatives, const TimeGrid& grid) {
  const Vector sq = derivatives.colwise().squaredNorm().transpose();
  return trapezoid(grid.times(), sq);
}

/** Residual energy over derivative energy. */
[[nodiscard]] inline double normalized_loss(const FittedDynamics& f, const Matrix& states, const Matrix& derivatives,
                                            const TimeGrid& grid) {
  const double denom = derivative_energy(derivatives, grid);
  if (!(denom > 0.0)) {
    throw Error(ErrorKind::ZeroDenominator, "derivative energy is zero");
  }
  return trajectory_loss(f, states, derivatives, grid) / denom;
}

/** Fraction of trials where loss_a <= loss_b (ties favour A). */
[[nodiscard]] inline double pairwise_comparison(const std::vector<double>& loss_a, const std::vector<double>& loss_b) {
  require(loss_a.size() == loss_b.size(), "loss vectors differ in length", ErrorKind::LengthMismatch);
  require(!loss_a.empty(), "no trials to compare", ErrorKind::LengthMismatch);
  std::size_t favourable = 0;
  for (std::size_t i = 0; i < loss_a.size(); ++i) {
    if (loss_a[i] <= loss_b[i]) {
      ++favourable;
    }
  }
  return static_cast<double>(favourable) / static_cast<double>(loss_a.size());
}

struct LossReport {
  double max_loss = 0.0;
  double avg_loss = 0.0;
  double gen_loss = 0.0;
  std::vector<double> per_source;
  int replication = 0;
  std::string method;
};

/** Max and average over the training sources' latent truth, generalization on the held-out source. */
[[nodiscard]] inline LossReport loss_report(const FittedDynamics& f, const std::vector<Source>& train,
                                            const Source& heldout) {
  require(!train.empty(), "no training sources");
  LossReport r;
  for (const auto& s : train) {
    require(s.latent_states && s.latent_derivatives, "loss_report needs latent truth");
    r.per_source.push_back(trajectory_loss(f, *s.latent_states, *s.latent_derivatives, s.grid));
  }
  r.max_loss = *std::max_element(r.per_source.begin(), r.per_source.end());
  r.avg_loss = std::accumulate(r.per_source.begin(), r.per_source.end(), 0.0) / static_cast<double>(r.per_source.size());
  require(heldout.latent_states && heldout.latent_derivatives, "held-out source needs latent truth");
  r.gen_loss = trajectory_loss(f, *heldout.latent_states, *heldout.latent_derivatives, heldout.grid);
  return r;
}

enum class Method { Proposed, Erm, PlugIn, Ridge };

[[nodiscard]] inline const char* ToString(Method m) {
  switch (m) {
    case Method::Proposed:
      return "proposed";
    case Method::Erm:
      return "erm";
    case Method::PlugIn:
      return "plugin";
    case Method::Ridge:
      return "ridge";
  }
  return "unknown";
}

[[nodiscard]] inline Method method_from_string(const std::string& s) {
  if (s == "proposed" || s == "stable") {
    return Method::Proposed;
  }
  if (s == "erm") {
    return Method::Erm;
  }
  if (s == "plugin") {
    return Method::PlugIn;
  }
  if (s == "ridge") {
    return Method::Ridge;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown method '" + s + "'");
}

/** Estimation-run defaults: CV bandwidth without undersmoothing, no interval stage needed. */
[[nodiscard]] inline PipelineOptions estimation_options() {
  PipelineOptions o;
  o.inference = false;
  return o;
}

/**
 * Fits each requested method on one data set. All methods share the smoothing stage;
 * weight-based methods differ only in how the weights are chosen.
 */
[[nodiscard]] inline std::map<Method, FittedDynamics> fit_methods(const SourceObservations& obs,
                                                                  const std::vector<Method>& methods,
                                                                  const PipelineOptions& options) {
  PipelineOptions o = options;
  o.fit_dynamics = false;
  o.method = WeightMethod::Stabilized;
  const PipelineResult base = run_estimation(obs, o);
  std::map<Method, FittedDynamics> out;
  for (Method m : methods) {
    if (m == Method::Erm) {
      out[m] = fit_erm(base.smoothed, options.kernel);
      continue;
    }
    SimplexWeights w = base.weights;
    if (m == Method::PlugIn) {
      w = plug_in_weights(base.gamma);
    } else if (m == Method::Ridge) {
      w = ridge_weights(base.gamma,
                        options.ridge_lambda >= 0.0 ? options.ridge_lambda : default_ridge_lambda(base.gamma));
    }
    const RobustTrajectory traj = aggregate(base.smoothed, w);
    out[m] = fit_dynamics(traj.x_robust, traj.d_robust, base.eval_grid.times(), base.eval_grid.horizon(),
                          options.kernel);
  }
  return out;
}

struct BenchConfig {
  SimulationConfig simulation;
  int replications = 100;
  std::vector<Method> methods = {Method::Proposed, Method::Erm};
  PipelineOptions options = estimation_options();
  unsigned threads = 1;
};

struct MethodSummary {
  std::string method;
  double max_mean = 0.0, max_sd = 0.0;
  double avg_mean = 0.0, avg_sd = 0.0;
  double gen_mean = 0.0, gen_sd = 0.0;
};

struct BenchResult {
  std::map<Method, std::vector<LossReport>> reports;  // indexed by replication
  std::vector<MethodSummary> summary;
};

namespace detail {
[[nodiscard]] inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) {
    ss += (x - mean) * (x - mean);
  }
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}
}  // namespace detail

[[nodiscard]] inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

/** Replication r uses seed simulation.seed + r; results are merged by replication index. */
[[nodiscard]] inline BenchResult run_benchmark(const BenchConfig& config) {
  require(config.replications >= 1, "need at least one replication");
  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<std::map<Method, LossReport>> per_rep(reps);
  parallel_for(reps, config.threads, [&](std::size_t r) {
    SimulationConfig sim = config.simulation;
    sim.seed = config.simulation.seed + r;
    const SourceObservations obs = generate_sources(sim);
    const Source heldout = generate_heldout(sim);
    const auto fits = fit_methods(obs, config.methods, config.options);
    for (const auto& [m, f] : fits) {
      LossReport rep = loss_report(f, obs.sources, heldout);
      rep.replication = static_cast<int>(r);
      rep.method = ToString(m);
      per_rep[r][m] = std::move(rep);
    }
  });
  BenchResult out;
  for (Method m : config.methods) {
    std::vector<double> mx, av, gn;
    for (std::size_t r = 0; r < reps; ++r) {
      const LossReport& rep = per_rep[r].at(m);
      out.reports[m].push_back(rep);
      mx.push_back(rep.max_loss);
      av.push_back(rep.avg_loss);
      gn.push_back(rep.gen_loss);
    }
    MethodSummary s;
    s.method = ToString(m);
    std::tie(s.max_mean, s.max_sd) = detail::mean_sd(mx);
    std::tie(s.avg_mean, s.avg_sd) = detail::mean_sd(av);
    std::tie(s.gen_mean, s.gen_sd) = detail::mean_sd(gn);
    out.summary.push_back(s);
  }
  return out;
}

struct CoverageReport {
  double ecp = 0.0;
  double cil = 0.0;
  std::size_t covered = 0;
  std::size_t total = 0;
  std::vector<double> ecp_per_replication;
  std::vector<double> cil_per_replication;
};

struct CoverageConfig {
  SimulationConfig simulation;
  int replications = 100;
  double alpha = 0.05;
  PipelineOptions options;  // inference defaults (undersmoothed bandwidth)
  unsigned threads = 1;
};

/**
 * Empirical coverage of the pointwise band for the population target
 * sum_k w*_k X^(k)(t), with w* the stabilized weights (d_n = 0) of the latent Gamma.
 * Boundary-flagged points are excluded.
 */
[[nodiscard]] inline CoverageReport coverage_experiment(const CoverageConfig& config) {
  require(config.replications >= 1, "need at least one replication");
  const auto reps = static_cast<std::size_t>(config.replications);
  struct RepCounts {
    std::size_t covered = 0, total = 0;
    double width_sum = 0.0;
  };
  std::vector<RepCounts> counts(reps);
  parallel_for(reps, config.threads, [&](std::size_t r) {
    SimulationConfig sim = config.simulation;
    sim.seed = config.simulation.seed + r;
    const SourceObservations obs = generate_sources(sim);
    PipelineOptions o = config.options;
    o.alpha = config.alpha;
    o.fit_dynamics = false;
    const PipelineResult res = run_estimation(obs, o);
    const GammaMatrix oracle_gamma = latent_gamma(obs, o.trim);
    const Vector w_star = stabilized_weights(oracle_gamma, 0.0).omega;
    Matrix target = Matrix::Zero(res.robust.x_robust.rows(), res.robust.x_robust.cols());
    for (int k = 0; k < obs.K(); ++k) {
      target += w_star[k] * *obs.sources[static_cast<std::size_t>(k)].latent_states;
    }
    RepCounts c;
    for (Eigen::Index q = 0; q < target.cols(); ++q) {
      if (res.robust.boundary[static_cast<std::size_t>(q)]) {
        continue;
      }
      for (Eigen::Index j = 0; j < target.rows(); ++j) {
        ++c.total;
        if (res.band.lower(j, q) <= target(j, q) && target(j, q) <= res.band.upper(j, q)) {
          ++c.covered;
        }
        c.width_sum += res.band.upper(j, q) - res.band.lower(j, q);
      }
    }
    counts[r] = c;
  });
  CoverageReport rep;
  double width = 0.0;
  for (const auto& c : counts) {
    rep.covered += c.covered;
    rep.total += c.total;
    width += c.width_sum;
    rep.ecp_per_replication.push_back(c.total ? static_cast<double>(c.covered) / static_cast<double>(c.total) : 0.0);
    rep.cil_per_replication.push_back(c.total ? c.width_sum / static_cast<double>(c.total) : 0.0);
  }
  rep.ecp = rep.total ? static_cast<double>(rep.covered) / static_cast<double>(rep.total) : 0.0;
  rep.cil = rep.total ? width / static_cast<double>(rep.total) : 0.0;
  return rep;
}

/** @brief Per-subject trial counts where the proposed fit is no worse than the baseline. */
struct LosoSubjectResult {
  std::string subject;
  std::size_t trials = 0;
  std::map<std::string, std::size_t> favourable;  // baseline name -> count
  Vector weights;                                  // stabilized weights of the training subjects
};

/**
 * Leave-one-subject-out: fit on the remaining subjects, then score each trial of the held-out
 * subject by normalized_loss, substituting its smoothed states and derivatives for the latent
 * ones. Every subject must carry trial ids.
 */
[[nodiscard]] inline std::vector<LosoSubjectResult> leave_one_subject_out(const SourceObservations& obs,
                                                                          const std::vector<std::string>& names,
                                                                          const std::vector<Method>& baselines,
                                                                          const PipelineOptions& options,
                                                                          unsigned threads = 1) {
  require(obs.K() >= 3, "leave-one-subject-out needs at least three subjects");
  require(names.size() == obs.sources.size(), "one name per subject required", ErrorKind::LengthMismatch);
  for (const auto& s : obs.sources) {
    require(s.trial.size() == s.n(), "every subject needs a trial column", ErrorKind::HeaderMismatch);
  }
  std::vector<LosoSubjectResult> results(obs.sources.size());
  parallel_for(obs.sources.size(), threads, [&](std::size_t held) {
    SourceObservations train;
    for (std::size_t k = 0; k < obs.sources.size(); ++k) {
      if (k != held) {
        train.sources.push_back(obs.sources[k]);
      }
    }
    std::vector<Method> methods = {Method::Proposed};
    methods.insert(methods.end(), baselines.begin(), baselines.end());
    const auto fits = fit_methods(train, methods, options);
    PipelineOptions wopt = options;
    wopt.fit_dynamics = false;
    const PipelineResult base = run_estimation(train, wopt);

    const Source& test = obs.sources[held];
    SmoothingConfig sc = options.smoothing;
    if (base.bandwidth > 0.0) {
      sc.h = base.bandwidth;
    }
    const SmoothedSource sm = smooth_source(test.grid, test.y, test.grid, sc);
    LosoSubjectResult res;
    res.subject = names[held];
    res.weights = base.weights.omega;
    std::vector<int> trial_ids = test.trial;
    std::sort(trial_ids.begin(), trial_ids.end());
    trial_ids.erase(std::unique(trial_ids.begin(), trial_ids.end()), trial_ids.end());
    std::map<Method, std::vector<double>> losses;
    for (int id : trial_ids) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < test.n(); ++i) {
        if (test.trial[i] == id) {
          idx.push_back(i);
        }
      }
      if (idx.size() < 2) {
        continue;
      }
      Matrix xs(sm.x_hat.rows(), static_cast<Eigen::Index>(idx.size()));
      Matrix ds(sm.d_hat.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) {
        xs.col(static_cast<Eigen::Index>(c)) = sm.x_hat.col(static_cast<Eigen::Index>(idx[c]));
        ds.col(static_cast<Eigen::Index>(c)) = sm.d_hat.col(static_cast<Eigen::Index>(idx[c]));
      }
      const TimeGrid g = test.grid.subset(idx);
      if (!(derivative_energy(ds, g) > 0.0)) {
        continue;
      }
      for (const auto& [m, f] : fits) {
        losses[m].push_back(normalized_loss(f, xs, ds, g));
      }
    }
    res.trials = losses[Method::Proposed].size();
    for (Method b : baselines) {
      std::size_t fav = 0;
      for (std::size_t i = 0; i < res.trials; ++i) {
        if (losses[Method::Proposed][i] <= losses[b][i]) {
          ++fav;
        }
      }
      res.favourable[ToString(b)] = fav;
    }
    results[held] = std::move(res);
  });
  return results;
}

}  // namespace robust_ode
