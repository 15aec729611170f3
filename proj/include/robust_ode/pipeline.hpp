/**
 * @file pipeline.hpp
 * @brief End-to-end estimation: smooth -> Gamma -> tolerance -> weights -> aggregate ->
 *        confidence band -> dynamics fit.
 */
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "robust_ode/dynamics_fit.hpp"
#include "robust_ode/gamma.hpp"
#include "robust_ode/ode_models.hpp"
#include "robust_ode/robust_trajectory.hpp"
#include "robust_ode/smoothing.hpp"
#include "robust_ode/weights.hpp"

namespace robust_ode {

struct PipelineOptions {
  SmoothingConfig smoothing;
  bool auto_bandwidth = true;  // pooled leave-one-out over all sources and dimensions
  bool inference = true;       // multiply the CV bandwidth by smoothing.undersmooth_factor
  double trim = 0.05;
  bool auto_tolerance = true;
  double C_d = 0.01;
  double d_n = 0.0;  // used when auto_tolerance is false
  WeightMethod method = WeightMethod::Stabilized;
  double ridge_lambda = -1.0;  // < 0 selects 1e-3 * trace(Gamma) / K
  double alpha = 0.05;
  double sigma_floor = 0.0;
  std::size_t eval_points = 0;  // 0: shared observation grid (or the smallest n if grids differ)
  KernelParams kernel;
  bool fit_dynamics = true;
  bool certify_weights = false;
};

struct PipelineResult {
  TimeGrid eval_grid;
  std::optional<BandwidthSelection> bandwidth_selection;
  double bandwidth = 0.0;
  std::vector<SmoothedSource> smoothed;
  GammaMatrix gamma;
  std::optional<std::pair<GammaMatrix, GammaMatrix>> split;
  std::optional<ToleranceConfig> tolerance;
  SimplexWeights weights;
  RobustTrajectory robust;
  ConfidenceBand band;
  std::optional<FittedDynamics> dynamics;
};

/** Shared observation grid, or a uniform grid on [0, shortest horizon] when grids differ. */
[[nodiscard]] inline TimeGrid common_eval_grid(const SourceObservations& obs, std::size_t points) {
  if (points == 0 && obs.shared_grid()) {
    return obs.sources.front().grid;
  }
  double horizon = obs.sources.front().grid.horizon();
  std::size_t n_min = obs.sources.front().n();
  for (const auto& s : obs.sources) {
    horizon = std::min(horizon, s.grid.horizon());
    n_min = std::min(n_min, s.n());
  }
  return TimeGrid::uniform(points > 0 ? points : n_min, horizon);
}

/** Bandwidth by leave-one-out pooled over every source and dimension. */
[[nodiscard]] inline BandwidthSelection select_pooled_bandwidth(const SourceObservations& obs, double horizon,
                                                                const SmoothingConfig& config) {
  std::vector<SeriesRef> series;
  for (const auto& s : obs.sources) {
    series.push_back(SeriesRef{&s.grid.times(), &s.y});
  }
  return select_bandwidth_pooled(series, horizon, config);
}

[[nodiscard]] inline double default_ridge_lambda(const GammaMatrix& gamma) {
  return 1e-3 * gamma.entries.trace() / static_cast<double>(gamma.K());
}

[[nodiscard]] inline SimplexWeights compute_weights(const GammaMatrix& gamma, double d_n, const PipelineOptions& o) {
  switch (o.method) {
    case WeightMethod::PlugIn:
      return plug_in_weights(gamma);
    case WeightMethod::Ridge:
      return ridge_weights(gamma, o.ridge_lambda >= 0.0 ? o.ridge_lambda : default_ridge_lambda(gamma));
    case WeightMethod::Stabilized:
    case WeightMethod::Oracle: {
      StabilizedOptions so;
      so.certify = o.certify_weights;
      return stabilized_weights(gamma, d_n, so);
    }
  }
  return {};
}

/** Runs every estimation stage on `obs`; the returned result holds each stage's output. */
[[nodiscard]] inline PipelineResult run_estimation(const SourceObservations& obs, const PipelineOptions& options) {
  obs.validate();
  require(options.trim >= 0.0 && options.trim < 0.25, "trim must lie in [0, 0.25)");
  PipelineResult r;
  r.eval_grid = common_eval_grid(obs, options.eval_points);
  SmoothingConfig sc = options.smoothing;
  if (options.auto_bandwidth) {
    r.bandwidth_selection = select_pooled_bandwidth(obs, r.eval_grid.horizon(), sc);
    sc.h = options.inference ? r.bandwidth_selection->inference_bandwidth : r.bandwidth_selection->cv_bandwidth;
  }
  r.bandwidth = sc.h;
  for (const auto& s : obs.sources) {
    SmoothedSource sm = smooth_source(s.grid, s.y, r.eval_grid, sc);
    if (options.sigma_floor > 0.0) {
      sm.sigma_hat = sm.sigma_hat.cwiseMax(options.sigma_floor);
    }
    r.smoothed.push_back(std::move(sm));
  }
  r.gamma = estimate_gamma(r.smoothed, options.trim);
  double d_n = options.d_n;
  if (options.method == WeightMethod::Stabilized && options.auto_tolerance) {
    r.split = split_gamma(obs, r.eval_grid, sc, options.trim);
    std::size_t n_min = obs.sources.front().n();
    for (const auto& s : obs.sources) {
      n_min = std::min(n_min, s.n());
    }
    r.tolerance = select_tolerance(r.split->first.entries, r.split->second.entries, r.gamma.entries, n_min, options.C_d);
    d_n = r.tolerance->d_n;
  }
  r.weights = compute_weights(r.gamma, d_n, options);
  r.robust = aggregate(r.smoothed, r.weights);
  std::size_t n_min = r.smoothed.front().n_obs;
  for (const auto& s : r.smoothed) {
    n_min = std::min(n_min, s.n_obs);
  }
  r.robust.n = n_min;
  r.band = confidence_band(r.robust, options.alpha);
  if (options.fit_dynamics) {
    r.dynamics = fit_dynamics(r.robust.x_robust, r.robust.d_robust, r.eval_grid.times(), r.eval_grid.horizon(),
                              options.kernel);
  }
  return r;
}

}  // namespace robust_ode
