/**
 * @file dynamics_fit.hpp
 * @brief Gradient-matching kernel ridge estimate of the link function F(x, t) and the
 *        pooled-sample (ERM) baseline.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "robust_ode/smoothing.hpp"
#include "robust_ode/types.hpp"

namespace robust_ode {

/** @brief Kernel expansion F_j(z) = mean_j + sum_i c_{ij} exp(-|z - z_i|^2 / (2 b^2)). */
struct FittedDynamics {
  Matrix centers;       // m x d inputs (state, then scaled time when include_time)
  Matrix coefficients;  // m x p dual coefficients
  Vector target_mean;   // p, intercept absorbed by centering
  double kernel_bandwidth = 1.0;
  double ridge = 0.0;
  bool include_time = false;
  double time_scale = 1.0;  // time enters as t / time_scale

  [[nodiscard]] int dimension() const { return static_cast<int>(coefficients.cols()); }
};

struct KernelParams {
  double bandwidth = 0.0;          // > 0 fixes the bandwidth; 0 selects it from the data
  double ridge_per_sample = 1e-4;  // ridge = ridge_per_sample * m
  bool include_time = false;
  bool cross_validate = true;      // leave-one-out over multiples of the median; false keeps the median
};

namespace detail {

[[nodiscard]] inline Matrix fit_inputs(const Matrix& states, const std::vector<double>& times, bool include_time,
                                       double time_scale) {
  if (!include_time) {
    return states;
  }
  Matrix z(states.rows(), states.cols() + 1);
  z.leftCols(states.cols()) = states;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    z(i, states.cols()) = times[static_cast<std::size_t>(i)] / time_scale;
  }
  return z;
}

[[nodiscard]] inline Matrix gaussian_gram(const Matrix& a, const Matrix& b, double bandwidth) {
  Matrix g(a.rows(), b.rows());
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      g(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
    }
  }
  return g;
}

}  // namespace detail

/** Median Euclidean distance over distinct pairs of rows (1 if all rows coincide). */
[[nodiscard]] inline double median_pairwise_distance(const Matrix& z) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(z.rows() * (z.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) {
      d.push_back((z.row(i) - z.row(j)).norm());
    }
  }
  if (d.empty()) {
    return 1.0;
  }
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

/**
 * Kernel ridge regression of each derivative column on the inputs (states, optionally
 * scaled time), with per-column centering. states and derivatives are m x p.
 */
[[nodiscard]] inline FittedDynamics fit_gradient_matching(const Matrix& states, const Matrix& derivatives,
                                                          const std::vector<double>& times, double kernel_bandwidth,
                                                          double ridge, bool include_time = false,
                                                          double time_scale = 1.0) {
  require(states.rows() >= 2, "gradient matching needs at least two samples");
  require(states.rows() == derivatives.rows() && states.cols() == derivatives.cols(),
          "states and derivatives differ in shape", ErrorKind::LengthMismatch);
  require(!include_time || times.size() == static_cast<std::size_t>(states.rows()),
          "one time per sample required", ErrorKind::LengthMismatch);
  require(kernel_bandwidth > 0.0 && std::isfinite(kernel_bandwidth), "kernel bandwidth must be positive");
  require(ridge >= 0.0 && std::isfinite(ridge), "ridge must be >= 0");
  require(states.allFinite() && derivatives.allFinite(), "training data must be finite");
  FittedDynamics f;
  f.kernel_bandwidth = kernel_bandwidth;
  f.ridge = ridge;
  f.include_time = include_time;
  f.time_scale = time_scale;
  f.centers = detail::fit_inputs(states, times, include_time, time_scale);
  f.target_mean = derivatives.colwise().mean().transpose();
  const Matrix centered = derivatives.rowwise() - f.target_mean.transpose();
  Matrix system = detail::gaussian_gram(f.centers, f.centers, kernel_bandwidth);
  system.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::SingularSystem, "regularized kernel matrix is not numerically positive definite");
  }
  f.coefficients = llt.solve(centered);
  if (!f.coefficients.allFinite()) {
    throw Error(ErrorKind::SingularSystem, "kernel ridge solve produced non-finite coefficients");
  }
  return f;
}

/** F_hat(x, t) as a p-vector. */
[[nodiscard]] inline Vector predict_derivative(const FittedDynamics& f, const Vector& x, double t) {
  Matrix z(1, f.centers.cols());
  z.leftCols(x.size()) = x.transpose();
  if (f.include_time) {
    z(0, x.size()) = t / f.time_scale;
  }
  const Matrix k = detail::gaussian_gram(z, f.centers, f.kernel_bandwidth);
  return f.target_mean + (k * f.coefficients).transpose();
}

/** Predictions at many states (columns of `states`, p x m), returned p x m. */
[[nodiscard]] inline Matrix predict_trajectory(const FittedDynamics& f, const Matrix& states,
                                               const std::vector<double>& times) {
  const Matrix z = detail::fit_inputs(states.transpose(), times, f.include_time, f.time_scale);
  const Matrix k = detail::gaussian_gram(z, f.centers, f.kernel_bandwidth);
  return ((k * f.coefficients).rowwise() + f.target_mean.transpose()).transpose();
}

/** Leave-one-out mean squared residual of kernel ridge at one bandwidth (+inf if singular). */
[[nodiscard]] inline double kernel_ridge_loo(const Matrix& inputs, const Matrix& centered_targets, double bandwidth,
                                             double ridge) {
  Matrix system = detail::gaussian_gram(inputs, inputs, bandwidth);
  const Matrix gram = system;
  system.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) {
    return std::numeric_limits<double>::infinity();
  }
  const Matrix hat = gram * llt.solve(Matrix::Identity(inputs.rows(), inputs.rows()));
  const Matrix fitted = hat * centered_targets;
  double sse = 0.0;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const double denom = 1.0 - hat(i, i);
    if (!(denom > 1e-10)) {
      return std::numeric_limits<double>::infinity();
    }
    sse += ((centered_targets.row(i) - fitted.row(i)) / denom).squaredNorm();
  }
  return sse / static_cast<double>(inputs.rows());
}

/**
 * Fit with KernelParams: a fixed bandwidth, the median heuristic, or leave-one-out over
 * median * 2^k for k = -2, -1, ... up to twice the largest pairwise distance. The upper
 * end matters for trajectories that settle at an equilibrium, where most pairs are close
 * and the median is far below the scale of the transient. Ridge = ridge_per_sample * m.
 * Inputs are p x m arrays as produced by smoothing.
 */
[[nodiscard]] inline FittedDynamics fit_dynamics(const Matrix& states_pm, const Matrix& derivatives_pm,
                                                 const std::vector<double>& times, double horizon,
                                                 const KernelParams& params) {
  const Matrix states = states_pm.transpose();
  const Matrix derivs = derivatives_pm.transpose();
  const double ridge = params.ridge_per_sample * static_cast<double>(states.rows());
  const Matrix inputs = detail::fit_inputs(states, times, params.include_time, horizon);
  double bandwidth = params.bandwidth > 0.0 ? params.bandwidth : median_pairwise_distance(inputs);
  if (params.cross_validate && !(params.bandwidth > 0.0)) {
    const Matrix centered = derivs.rowwise() - derivs.colwise().mean();
    const double base = bandwidth;
    double best = std::numeric_limits<double>::infinity();
    double widest = 0.0;
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < inputs.rows(); ++j) {
        widest = std::max(widest, (inputs.row(i) - inputs.row(j)).norm());
      }
    }
    const double top = std::max(4.0 * base, 2.0 * widest);
    for (double candidate = 0.25 * base; candidate <= top; candidate *= 2.0) {
      const double score = kernel_ridge_loo(inputs, centered, candidate, ridge);
      if (score < best) {
        best = score;
        bandwidth = candidate;
      }
    }
  }
  return fit_gradient_matching(states, derivs, times, bandwidth, ridge, params.include_time, horizon);
}

/** ERM baseline: one fit on the union of every source's (state, time, derivative) samples. */
[[nodiscard]] inline FittedDynamics fit_erm(const std::vector<SmoothedSource>& smoothed, const KernelParams& params) {
  require(!smoothed.empty(), "no smoothed sources");
  Eigen::Index total = 0;
  for (const auto& s : smoothed) {
    require(s.dimension() == smoothed.front().dimension(), "sources differ in dimension", ErrorKind::GridMismatch);
    total += s.x_hat.cols();
  }
  const auto p = smoothed.front().x_hat.rows();
  Matrix states(p, total);
  Matrix derivs(p, total);
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(total));
  Eigen::Index col = 0;
  for (const auto& s : smoothed) {
    states.middleCols(col, s.x_hat.cols()) = s.x_hat;
    derivs.middleCols(col, s.d_hat.cols()) = s.d_hat;
    col += s.x_hat.cols();
    times.insert(times.end(), s.eval_grid.times().begin(), s.eval_grid.times().end());
  }
  return fit_dynamics(states, derivs, times, smoothed.front().eval_grid.horizon(), params);
}

}  // namespace robust_ode
