/**
 * @file types.hpp
 * @brief Core value types, error codes, and small numeric helpers shared by every module.
 */
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robust_ode {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/** @brief Every failure mode a module can report. */
enum class ErrorKind {
  InvalidArgument,
  NonFiniteState,
  DegenerateDenominator,
  UnknownLevel,
  BlowUp,
  SingularLocalFit,
  EmptyWindow,
  GridMismatch,
  MaxIterations,
  BisectionStall,
  ZeroGamma,
  SingularSystem,
  ZeroDenominator,
  LengthMismatch,
  HeaderMismatch,
  NonMonotoneTime,
  Io
};

[[nodiscard]] inline const char* ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return "invalid_argument";
    case ErrorKind::NonFiniteState:
      return "non_finite_state";
    case ErrorKind::DegenerateDenominator:
      return "degenerate_denominator";
    case ErrorKind::UnknownLevel:
      return "unknown_level";
    case ErrorKind::BlowUp:
      return "blow_up";
    case ErrorKind::SingularLocalFit:
      return "singular_local_fit";
    case ErrorKind::EmptyWindow:
      return "empty_window";
    case ErrorKind::GridMismatch:
      return "grid_mismatch";
    case ErrorKind::MaxIterations:
      return "max_iterations";
    case ErrorKind::BisectionStall:
      return "bisection_stall";
    case ErrorKind::ZeroGamma:
      return "zero_gamma";
    case ErrorKind::SingularSystem:
      return "singular_system";
    case ErrorKind::ZeroDenominator:
      return "zero_denominator";
    case ErrorKind::LengthMismatch:
      return "length_mismatch";
    case ErrorKind::HeaderMismatch:
      return "header_mismatch";
    case ErrorKind::NonMonotoneTime:
      return "non_monotone_time";
    case ErrorKind::Io:
      return "io";
  }
  return "unknown";
}

/**
 * @brief Exception carrying an ErrorKind.
 *
 * Input-shaped failures (bad files, malformed arguments) map to CLI exit code 2,
 * numerical failures to exit code 3.
 */
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ToString(kind)) + ": " + message), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

  [[nodiscard]] bool is_input_error() const noexcept {
    switch (kind_) {
      case ErrorKind::InvalidArgument:
      case ErrorKind::UnknownLevel:
      case ErrorKind::GridMismatch:
      case ErrorKind::LengthMismatch:
      case ErrorKind::HeaderMismatch:
      case ErrorKind::NonMonotoneTime:
      case ErrorKind::Io:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, const std::string& message,
                    ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!condition) {
    throw Error(kind, message);
  }
}

/** @brief Ordered observation or evaluation times on [0, horizon]. */
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(std::vector<double> times, double horizon) : times_(std::move(times)), horizon_(horizon) {
    validate();
  }

  /** Uniform grid of n points on [0, horizon], both endpoints included. */
  [[nodiscard]] static TimeGrid uniform(std::size_t n, double horizon) {
    require(n >= 2, "TimeGrid needs at least two points");
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = horizon * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    t.back() = horizon;
    return TimeGrid(std::move(t), horizon);
  }

  [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }
  [[nodiscard]] double horizon() const noexcept { return horizon_; }
  [[nodiscard]] std::size_t size() const noexcept { return times_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return times_[i]; }

  /** Subgrid at the given indices; the horizon is kept. */
  [[nodiscard]] TimeGrid subset(const std::vector<std::size_t>& idx) const {
    std::vector<double> t;
    t.reserve(idx.size());
    for (std::size_t i : idx) {
      t.push_back(times_.at(i));
    }
    TimeGrid g;
    g.times_ = std::move(t);
    g.horizon_ = horizon_;
    return g;
  }

  [[nodiscard]] bool operator==(const TimeGrid& other) const {
    return horizon_ == other.horizon_ && times_ == other.times_;
  }

 private:
  void validate() const {
    require(times_.size() >= 2, "TimeGrid needs at least two points");
    require(std::isfinite(horizon_) && horizon_ > 0.0, "TimeGrid horizon must be positive");
    for (std::size_t i = 1; i < times_.size(); ++i) {
      require(times_[i] > times_[i - 1], "TimeGrid times must be strictly increasing",
              ErrorKind::NonMonotoneTime);
    }
    require(times_.front() >= 0.0 && times_.back() <= horizon_ * (1.0 + 1e-12),
            "TimeGrid times must lie in [0, horizon]");
  }

  std::vector<double> times_;
  double horizon_ = 1.0;
};

/** @brief Composite trapezoid rule over samples y(t_i) on an arbitrary increasing grid. */
template <class Values>
[[nodiscard]] double trapezoid(const std::vector<double>& t, const Values& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    s += 0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]);
  }
  return s;
}

/** @brief Trapezoid weights w_i with sum_i w_i y_i equal to trapezoid(t, y). */
[[nodiscard]] inline std::vector<double> trapezoid_weights(const std::vector<double>& t) {
  std::vector<double> w(t.size(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double half = 0.5 * (t[i] - t[i - 1]);
    w[i - 1] += half;
    w[i] += half;
  }
  return w;
}

[[nodiscard]] inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace robust_ode
