/**
 * @file robust_trajectory.hpp
 * @brief Weighted aggregation of smoothed sources and its pointwise confidence band.
 */
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "robust_ode/smoothing.hpp"
#include "robust_ode/types.hpp"
#include "robust_ode/weights.hpp"

namespace robust_ode {

/**
 * Standard normal quantile: Acklam's rational approximation followed by one Halley step
 * on erfc, accurate to about 1e-15 in the central range.
 */
[[nodiscard]] inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/** @brief Robust aggregate of K smoothed sources (rows = dimensions, columns = eval grid). */
struct RobustTrajectory {
  Matrix x_robust;
  Matrix d_robust;
  Matrix sigma_robust;
  TimeGrid eval_grid;
  SimplexWeights weights;
  std::vector<bool> boundary;
  std::size_t n = 0;  // observations per source
  double h = 0.0;     // smoothing bandwidth, time units

  /** sqrt(n h / T): the bandwidth enters the interval on the unit time scale. */
  [[nodiscard]] double ci_scale() const { return std::sqrt(static_cast<double>(n) * h / eval_grid.horizon()); }
};

/** sigma_robust(t) = { sum_k w_k^2 sigma_k(t)^2 }^{1/2}, elementwise. */
[[nodiscard]] inline Matrix robust_sigma(const std::vector<Matrix>& sigmas, const Vector& omega) {
  require(!sigmas.empty() && static_cast<Eigen::Index>(sigmas.size()) == omega.size(),
          "one sigma array per weight required", ErrorKind::LengthMismatch);
  Matrix acc = Matrix::Zero(sigmas.front().rows(), sigmas.front().cols());
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    require(sigmas[k].rows() == acc.rows() && sigmas[k].cols() == acc.cols(), "sigma arrays differ in shape",
            ErrorKind::GridMismatch);
    require((sigmas[k].array() >= 0.0).all(), "sigma must be nonnegative");
    const double w = omega[static_cast<Eigen::Index>(k)];
    acc.array() += w * w * sigmas[k].array().square();
  }
  return acc.array().sqrt().matrix();
}

/** Weighted sums of values, derivatives, and standard errors across sources. */
[[nodiscard]] inline RobustTrajectory aggregate(const std::vector<SmoothedSource>& smoothed,
                                                const SimplexWeights& weights) {
  require(!smoothed.empty(), "no smoothed sources");
  require(weights.omega.size() == static_cast<Eigen::Index>(smoothed.size()), "weight count differs from K",
          ErrorKind::LengthMismatch);
  require((weights.omega.array() >= -1e-10).all() && std::abs(weights.omega.sum() - 1.0) <= 1e-10,
          "weights are not on the simplex");
  RobustTrajectory out;
  const auto& first = smoothed.front();
  out.x_robust = Matrix::Zero(first.x_hat.rows(), first.x_hat.cols());
  out.d_robust = Matrix::Zero(first.d_hat.rows(), first.d_hat.cols());
  std::vector<Matrix> sigmas;
  for (std::size_t k = 0; k < smoothed.size(); ++k) {
    const auto& s = smoothed[k];
    require(s.eval_grid == first.eval_grid && s.x_hat.rows() == first.x_hat.rows(),
            "sources do not share an evaluation grid", ErrorKind::GridMismatch);
    const double w = weights.omega[static_cast<Eigen::Index>(k)];
    out.x_robust += w * s.x_hat;
    out.d_robust += w * s.d_hat;
    sigmas.push_back(s.sigma_hat);
  }
  out.sigma_robust = robust_sigma(sigmas, weights.omega);
  out.eval_grid = first.eval_grid;
  out.weights = weights;
  out.boundary = first.boundary;
  out.n = first.n_obs;
  out.h = first.config.h;
  return out;
}

/** @brief Pointwise interval bounds, shaped like the trajectory. */
struct ConfidenceBand {
  Matrix lower;
  Matrix upper;
  double z = 0.0;
  double alpha = 0.05;
};

/** x_robust +/- z_{1-alpha/2} sigma_robust / sqrt(n h), with h on the unit time scale. */
[[nodiscard]] inline ConfidenceBand confidence_band(const RobustTrajectory& traj, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(traj.n > 0 && traj.h > 0.0, "confidence band needs n and h from the smoothing stage");
  ConfidenceBand band;
  band.alpha = alpha;
  band.z = normal_quantile(1.0 - 0.5 * alpha);
  const Matrix half = (band.z / traj.ci_scale()) * traj.sigma_robust;
  band.lower = traj.x_robust - half;
  band.upper = traj.x_robust + half;
  return band;
}

}  // namespace robust_ode
