/**
 * @file smoothing.hpp
 * @brief Local polynomial estimates of trajectories, derivatives, and pointwise standard
 *        errors from noisy observations.
 *
 * All smoothers here are linear in the observations. A LinearSmoother stores, for each
 * query time, the weights that produce the value (intercept) and the derivative (slope)
 * of the weighted local polynomial fit, so the same weights serve every dimension of a
 * source, leave-one-out scores, and standard errors.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "robust_ode/types.hpp"

namespace robust_ode {

enum class KernelType { Epanechnikov, Gaussian };

/**
 * How smooth_source fills sigma_hat.
 *
 * Kernel: the plug-in formula with the smoothing kernel G itself.
 * EquivalentKernel: the same formula with G replaced by the effective kernel n*h*l_i(t)
 * of the local polynomial fit (identical to Kernel for a local-constant fit on a uniform
 * design), which makes sigma_hat^2 / (n h) the sandwich variance of the fitted value.
 */
enum class SigmaMethod { Kernel, EquivalentKernel };

[[nodiscard]] inline const char* ToString(KernelType k) {
  return k == KernelType::Epanechnikov ? "epanechnikov" : "gaussian";
}

[[nodiscard]] inline KernelType kernel_from_string(const std::string& s) {
  if (s == "epanechnikov" || s == "epa") {
    return KernelType::Epanechnikov;
  }
  if (s == "gaussian" || s == "gauss") {
    return KernelType::Gaussian;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown kernel '" + s + "'");
}

[[nodiscard]] inline double kernel_value(KernelType kernel, double u) {
  if (kernel == KernelType::Epanechnikov) {
    return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
  }
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
}

/** Integral of G(u)^2 over the real line. */
[[nodiscard]] inline double kernel_square_integral(KernelType kernel) {
  return kernel == KernelType::Epanechnikov ? 0.6 : 0.5 / std::sqrt(std::numbers::pi);
}

/** Half-width of the kernel support in bandwidth units (infinite for Gaussian). */
[[nodiscard]] inline double kernel_support(KernelType kernel) {
  return kernel == KernelType::Epanechnikov ? 1.0 : std::numeric_limits<double>::infinity();
}

struct SmoothingConfig {
  double h = 0.1;      // value/derivative bandwidth, time units
  double h_se = 0.0;   // standard-error bandwidth, time units; 0 means "same as h"
  int order = 2;
  KernelType kernel = KernelType::Epanechnikov;
  double undersmooth_factor = 0.7;
  SigmaMethod sigma_method = SigmaMethod::EquivalentKernel;
  bool loo_residuals = true;  // residual_i / (1 - l_ii) in place of the in-sample residual

  [[nodiscard]] double se_bandwidth() const { return h_se > 0.0 ? h_se : h; }

  void validate() const {
    require(std::isfinite(h) && h > 0.0, "bandwidth h must be positive");
    require(h_se >= 0.0 && std::isfinite(h_se), "h_se must be positive (or 0 for h)");
    require(order >= 1 && order <= 3, "polynomial order must be 1, 2 or 3");
    require(undersmooth_factor > 0.0 && undersmooth_factor <= 1.0, "undersmooth_factor must lie in (0, 1]");
  }
};

/** Bandwidth widening for ill-conditioned local designs: factor 1.5, at most 4 times. */
inline constexpr double kWidenFactor = 1.5;
inline constexpr int kMaxWidenings = 4;
inline constexpr double kMinReciprocalCondition = 1e-10;

/** @brief Precomputed local polynomial weights for a set of query times. */
struct LinearSmoother {
  std::vector<std::size_t> first;     // first observation index with a stored weight, per query
  std::vector<Vector> value_weights;  // weights for the fitted value
  std::vector<Vector> slope_weights;  // weights for the fitted first derivative
  std::vector<double> bandwidth;      // bandwidth actually used (after widening)
  std::vector<bool> boundary;         // query within h of 0 or the horizon

  [[nodiscard]] std::size_t size() const { return first.size(); }

  [[nodiscard]] double value(std::size_t q, const double* y) const {
    const Vector& w = value_weights[q];
    double s = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      s += w[i] * y[first[q] + static_cast<std::size_t>(i)];
    }
    return s;
  }

  [[nodiscard]] double slope(std::size_t q, const double* y) const {
    const Vector& w = slope_weights[q];
    double s = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      s += w[i] * y[first[q] + static_cast<std::size_t>(i)];
    }
    return s;
  }

  /** Weight that query q places on observation i (0 outside the stored window). */
  [[nodiscard]] double value_weight_at(std::size_t q, std::size_t i) const {
    if (i < first[q] || i >= first[q] + static_cast<std::size_t>(value_weights[q].size())) {
      return 0.0;
    }
    return value_weights[q][static_cast<Eigen::Index>(i - first[q])];
  }
};

namespace detail {

/** Local fit at query t; returns false if the design is ill-conditioned at this bandwidth. */
[[nodiscard]] inline bool local_weights(const std::vector<double>& times, double t, double h, int order,
                                        KernelType kernel, std::size_t& first, Vector& value_w, Vector& slope_w) {
  const double reach = kernel_support(kernel) * h;
  std::size_t lo = 0;
  std::size_t hi = times.size();
  if (std::isfinite(reach)) {
    lo = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t - reach) - times.begin());
    hi = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t + reach) - times.begin());
  }
  const int ncoef = order + 1;
  if (hi <= lo || static_cast<int>(hi - lo) < ncoef) {
    return false;
  }
  const auto m = static_cast<Eigen::Index>(hi - lo);
  Matrix design(m, ncoef);
  Vector w(m);
  int positive = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double u = (times[lo + static_cast<std::size_t>(i)] - t) / h;
    w[i] = kernel_value(kernel, u);
    if (w[i] > 0.0) {
      ++positive;
    }
    double pw = 1.0;
    for (int c = 0; c < ncoef; ++c) {
      design(i, c) = pw;
      pw *= u;
    }
  }
  if (positive < ncoef) {
    return false;
  }
  const Matrix gram = design.transpose() * w.asDiagonal() * design;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || lmin / lmax < kMinReciprocalCondition) {
    return false;
  }
  // Rows 0 and 1 of gram^{-1} X^T W give the intercept and the scaled slope.
  const Matrix coef_map = gram.ldlt().solve(design.transpose() * w.asDiagonal());
  first = lo;
  value_w = coef_map.row(0).transpose();
  slope_w = coef_map.row(1).transpose() / h;
  return true;
}

}  // namespace detail

/**
 * Builds the local polynomial smoother mapping observations at `times` to values and
 * slopes at `query`. Ill-conditioned local designs are retried with the bandwidth widened
 * by kWidenFactor, at most kMaxWidenings times.
 */
[[nodiscard]] inline LinearSmoother build_smoother(const std::vector<double>& times, const std::vector<double>& query,
                                                   double horizon, double h, int order, KernelType kernel) {
  require(h > 0.0 && std::isfinite(h), "bandwidth must be positive");
  require(order >= 1 && order <= 3, "polynomial order must be 1, 2 or 3");
  require(static_cast<int>(times.size()) >= order + 2,
          "need at least order + 2 observations, got " + std::to_string(times.size()));
  LinearSmoother s;
  s.first.resize(query.size());
  s.value_weights.resize(query.size());
  s.slope_weights.resize(query.size());
  s.bandwidth.resize(query.size());
  s.boundary.resize(query.size());
  for (std::size_t q = 0; q < query.size(); ++q) {
    double hq = h;
    bool ok = false;
    for (int attempt = 0; attempt <= kMaxWidenings; ++attempt) {
      if (detail::local_weights(times, query[q], hq, order, kernel, s.first[q], s.value_weights[q],
                                s.slope_weights[q])) {
        ok = true;
        break;
      }
      hq *= kWidenFactor;
    }
    if (!ok) {
      throw Error(ErrorKind::SingularLocalFit,
                  "local design singular at t=" + std::to_string(query[q]) + " after widening");
    }
    s.bandwidth[q] = hq;
    s.boundary[q] = query[q] < h || query[q] > horizon - h;
  }
  return s;
}

/** @brief Values and derivatives of a local polynomial fit at query times. */
struct LocalPolyFit {
  Vector value;
  Vector slope;
  std::vector<bool> boundary;
};

[[nodiscard]] inline LocalPolyFit local_poly_smooth(const std::vector<double>& times, const Vector& values,
                                                    const TimeGrid& query, const SmoothingConfig& config) {
  config.validate();
  require(values.size() == static_cast<Eigen::Index>(times.size()), "values and times differ in length",
          ErrorKind::LengthMismatch);
  const LinearSmoother s = build_smoother(times, query.times(), query.horizon(), config.h, config.order, config.kernel);
  LocalPolyFit fit{Vector(static_cast<Eigen::Index>(s.size())), Vector(static_cast<Eigen::Index>(s.size())), s.boundary};
  for (std::size_t q = 0; q < s.size(); ++q) {
    fit.value[static_cast<Eigen::Index>(q)] = s.value(q, values.data());
    fit.slope[static_cast<Eigen::Index>(q)] = s.slope(q, values.data());
  }
  return fit;
}

/** @brief Outcome of leave-one-out bandwidth selection. */
struct BandwidthSelection {
  double cv_bandwidth = 0.0;
  double inference_bandwidth = 0.0;  // cv_bandwidth * undersmooth_factor
  std::vector<double> candidates;
  std::vector<double> scores;  // mean squared leave-one-out residual per candidate
};

/** Log-spaced candidates from (order+1) * widest spacing up to horizon / 2. */
[[nodiscard]] inline std::vector<double> bandwidth_candidates(const std::vector<double>& times, double horizon, int order,
                                                              int count = 30) {
  double widest = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) {
    widest = std::max(widest, times[i] - times[i - 1]);
  }
  const double lo = std::min((order + 1) * widest, 0.25 * horizon);
  const double hi = 0.5 * horizon;
  std::vector<double> c(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    c[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
  }
  return c;
}

/** @brief A series to score in bandwidth selection: times plus one or more value rows. */
struct SeriesRef {
  const std::vector<double>* times;
  const Matrix* values;  // rows are series sharing these times
};

/**
 * Leave-one-out cross-validation pooled over every row of every series. The LOO residual
 * of a linear smoother is (y_i - yhat_i) / (1 - L_ii). Candidates whose fit fails or
 * interpolates (L_ii ~ 1) score +inf. Ties go to the larger bandwidth, so a monotone CV
 * curve returns the grid endpoint.
 */
[[nodiscard]] inline BandwidthSelection select_bandwidth_pooled(const std::vector<SeriesRef>& series, double horizon,
                                                                const SmoothingConfig& config) {
  require(!series.empty(), "no series to select a bandwidth for");
  for (const auto& s : series) {
    require(s.times->size() >= 8, "bandwidth selection needs n >= 8");
  }
  BandwidthSelection sel;
  sel.candidates = bandwidth_candidates(*series.front().times, horizon, config.order);
  sel.scores.assign(sel.candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < sel.candidates.size(); ++c) {
    double sse = 0.0;
    std::size_t count = 0;
    bool valid = true;
    for (const auto& s : series) {
      LinearSmoother sm;
      try {
        sm = build_smoother(*s.times, *s.times, horizon, sel.candidates[c], config.order, config.kernel);
      } catch (const Error&) {
        valid = false;
        break;
      }
      for (std::size_t i = 0; i < sm.size() && valid; ++i) {
        const double lii = sm.value_weight_at(i, i);
        if (1.0 - lii < 1e-8) {
          valid = false;
          break;
        }
        for (Eigen::Index r = 0; r < s.values->rows(); ++r) {
          const Vector row = s.values->row(r).transpose();
          const double resid = (row[static_cast<Eigen::Index>(i)] - sm.value(i, row.data())) / (1.0 - lii);
          sse += resid * resid;
          ++count;
        }
      }
      if (!valid) {
        break;
      }
    }
    if (valid && count > 0) {
      sel.scores[c] = sse / static_cast<double>(count);
    }
  }
  std::size_t best = sel.candidates.size() - 1;
  for (std::size_t c = sel.candidates.size(); c-- > 0;) {
    if (sel.scores[c] < sel.scores[best]) {
      best = c;
    }
  }
  require(std::isfinite(sel.scores[best]), "no admissible bandwidth candidate", ErrorKind::SingularLocalFit);
  sel.cv_bandwidth = sel.candidates[best];
  sel.inference_bandwidth = sel.cv_bandwidth * config.undersmooth_factor;
  return sel;
}

[[nodiscard]] inline BandwidthSelection select_bandwidth(const std::vector<double>& times, const Vector& values,
                                                         double horizon, const SmoothingConfig& config) {
  require(values.size() == static_cast<Eigen::Index>(times.size()), "values and times differ in length",
          ErrorKind::LengthMismatch);
  const Matrix row = values.transpose();
  return select_bandwidth_pooled({SeriesRef{&times, &row}}, horizon, config);
}

/**
 * Plug-in standard error at time t:
 * sigma(t) = { (1/(n h_se)) sum_i G((t_i - t)/h_se)^2 residual_i^2 }^{1/2}.
 */
[[nodiscard]] inline double estimate_sigma(const std::vector<double>& times, const Vector& residuals, double t,
                                           double h_se, KernelType kernel) {
  require(residuals.size() == static_cast<Eigen::Index>(times.size()), "residuals and times differ in length",
          ErrorKind::LengthMismatch);
  require(h_se > 0.0, "h_se must be positive");
  double total = 0.0;
  double weight_mass = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double g = kernel_value(kernel, (times[i] - t) / h_se);
    weight_mass += g;
    total += g * g * residuals[static_cast<Eigen::Index>(i)] * residuals[static_cast<Eigen::Index>(i)];
  }
  if (!(weight_mass > 0.0)) {
    throw Error(ErrorKind::EmptyWindow, "no observation within the standard-error window at t=" + std::to_string(t));
  }
  return std::sqrt(total / (static_cast<double>(times.size()) * h_se));
}

/**
 * The same plug-in formula with G((t_i - t)/h_se) replaced by the effective kernel
 * n * h_se * l_i(t) of the local polynomial fit at bandwidth h_se, giving
 * sigma^2 = n h_se sum_i l_i(t)^2 residual_i^2.
 */
[[nodiscard]] inline double estimate_sigma_effective(const LinearSmoother& s, std::size_t q, const Vector& residuals,
                                                     double n_times_h_se) {
  const Vector& w = s.value_weights[q];
  double total = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double r = residuals[static_cast<Eigen::Index>(s.first[q]) + i];
    total += w[i] * w[i] * r * r;
  }
  return std::sqrt(n_times_h_se * total);
}

/** @brief Per-source smoothing output on an evaluation grid (rows = dimensions). */
struct SmoothedSource {
  Matrix x_hat;
  Matrix d_hat;
  Matrix sigma_hat;
  TimeGrid eval_grid;
  SmoothingConfig config;
  std::vector<bool> boundary;
  std::size_t n_obs = 0;

  [[nodiscard]] int dimension() const { return static_cast<int>(x_hat.rows()); }
};

/**
 * Smooths every dimension of one source onto eval_grid with bandwidth config.h.
 *
 * Standard errors are computed on the unit time scale u = t / horizon (bandwidths h/T,
 * h_se/T), which is the scale on which the interval half-width z * sigma / sqrt(n h) is
 * dimensionally consistent. Residuals are taken at the observation times; with
 * loo_residuals they are the leave-one-out residuals, which a near-interpolating local
 * fit would otherwise shrink toward zero.
 */
[[nodiscard]] inline SmoothedSource smooth_source(const TimeGrid& obs_grid, const Matrix& y, const TimeGrid& eval_grid,
                                                  const SmoothingConfig& config) {
  config.validate();
  require(y.cols() == static_cast<Eigen::Index>(obs_grid.size()), "observation count does not match grid");
  require(static_cast<int>(obs_grid.size()) >= config.order + 2,
          "need at least order + 2 observations, got " + std::to_string(obs_grid.size()));
  const double horizon = eval_grid.horizon();
  const auto& t_obs = obs_grid.times();
  const LinearSmoother at_eval = build_smoother(t_obs, eval_grid.times(), horizon, config.h, config.order, config.kernel);
  const bool same_grid = obs_grid.times() == eval_grid.times();
  const LinearSmoother at_obs =
      same_grid ? at_eval : build_smoother(t_obs, t_obs, horizon, config.h, config.order, config.kernel);

  const auto p = y.rows();
  const auto m = static_cast<Eigen::Index>(eval_grid.size());
  const auto n = static_cast<double>(obs_grid.size());
  SmoothedSource out;
  out.x_hat.resize(p, m);
  out.d_hat.resize(p, m);
  out.sigma_hat.resize(p, m);
  out.eval_grid = eval_grid;
  out.config = config;
  out.boundary = at_eval.boundary;
  out.n_obs = obs_grid.size();

  std::vector<double> u_obs(t_obs.size());
  for (std::size_t i = 0; i < t_obs.size(); ++i) {
    u_obs[i] = t_obs[i] / horizon;
  }
  const double h_se_unit = config.se_bandwidth() / horizon;
  const double nh_se_unit = n * h_se_unit;
  const bool same_se = config.se_bandwidth() == config.h;
  const LinearSmoother at_se =
      (config.sigma_method == SigmaMethod::EquivalentKernel && !same_se)
          ? build_smoother(t_obs, eval_grid.times(), horizon, config.se_bandwidth(), config.order, config.kernel)
          : LinearSmoother{};
  const LinearSmoother& se_smoother = same_se ? at_eval : at_se;

  for (Eigen::Index j = 0; j < p; ++j) {
    const Vector row = y.row(j).transpose();
    Vector resid(row.size());
    for (std::size_t i = 0; i < at_obs.size(); ++i) {
      double r = row[static_cast<Eigen::Index>(i)] - at_obs.value(i, row.data());
      if (config.loo_residuals) {
        const double leverage = at_obs.value_weight_at(i, i);
        if (leverage < 1.0 - 1e-8) {
          r /= 1.0 - leverage;
        }
      }
      resid[static_cast<Eigen::Index>(i)] = r;
    }
    for (Eigen::Index q = 0; q < m; ++q) {
      const auto qs = static_cast<std::size_t>(q);
      out.x_hat(j, q) = at_eval.value(qs, row.data());
      out.d_hat(j, q) = at_eval.slope(qs, row.data());
      if (config.sigma_method == SigmaMethod::Kernel) {
        out.sigma_hat(j, q) =
            estimate_sigma(u_obs, resid, eval_grid[qs] / horizon, h_se_unit, config.kernel);
      } else {
        out.sigma_hat(j, q) = estimate_sigma_effective(se_smoother, qs, resid, nh_se_unit);
      }
    }
  }
  require(out.x_hat.allFinite() && out.d_hat.allFinite() && out.sigma_hat.allFinite(),
          "smoothing produced non-finite output", ErrorKind::SingularLocalFit);
  return out;
}

}  // namespace robust_ode
