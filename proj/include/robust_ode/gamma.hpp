/**
 * @file gamma.hpp
 * @brief Gram matrix of estimated derivative trajectories and its split-sample pair.
 */
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "robust_ode/ode_models.hpp"
#include "robust_ode/smoothing.hpp"
#include "robust_ode/types.hpp"

namespace robust_ode {

/** @brief K x K Gram matrix of derivative inner products. */
struct GammaMatrix {
  Matrix entries;  // symmetrized estimate, as computed
  Matrix floored;  // entries with negative eigenvalues clipped to 0
  bool psd_floor_applied = false;
  double trim = 0.0;
  std::string quad_rule = "trapezoid";

  [[nodiscard]] Eigen::Index K() const { return entries.rows(); }
};

/** Spectral norm of a symmetric matrix (largest absolute eigenvalue). */
[[nodiscard]] inline double operator_norm(const Matrix& sym) {
  if (sym.size() == 0) {
    return 0.0;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

/** Symmetrize and clip negative eigenvalues at zero. */
[[nodiscard]] inline GammaMatrix make_gamma(const Matrix& raw, double trim) {
  require(raw.rows() == raw.cols(), "Gamma must be square");
  GammaMatrix g;
  g.entries = 0.5 * (raw + raw.transpose());
  g.trim = trim;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g.entries);
  const Vector lambda = eig.eigenvalues();
  if (lambda.size() > 0 && lambda.minCoeff() < 0.0) {
    g.floored = eig.eigenvectors() * lambda.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
    g.floored = 0.5 * (g.floored + g.floored.transpose());
    g.psd_floor_applied = true;
  } else {
    g.floored = g.entries;
  }
  return g;
}

/** Indices of grid points inside [trim * T, (1 - trim) * T]. */
[[nodiscard]] inline std::vector<std::size_t> trimmed_indices(const TimeGrid& grid, double trim) {
  const double lo = trim * grid.horizon();
  const double hi = (1.0 - trim) * grid.horizon();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] >= lo - 1e-12 * grid.horizon() && grid[i] <= hi + 1e-12 * grid.horizon()) {
      idx.push_back(i);
    }
  }
  return idx;
}

/**
 * Gamma_{k,k'} = sum_j int d_j^(k)(t) d_j^(k')(t) dt, by the trapezoid rule over the grid
 * points in [trim T, (1 - trim) T]. Each element of `derivatives` is p x m on `grid`.
 */
[[nodiscard]] inline GammaMatrix gamma_from_derivatives(const std::vector<Matrix>& derivatives, const TimeGrid& grid,
                                                        double trim) {
  require(trim >= 0.0 && trim < 0.25, "trim must lie in [0, 0.25)");
  require(!derivatives.empty(), "no sources");
  const auto K = static_cast<Eigen::Index>(derivatives.size());
  const auto idx = trimmed_indices(grid, trim);
  require(idx.size() >= 2, "trimmed grid has fewer than two points");
  std::vector<double> t;
  for (std::size_t i : idx) {
    t.push_back(grid[i]);
  }
  const auto w = trapezoid_weights(t);
  for (const auto& d : derivatives) {
    require(d.cols() == static_cast<Eigen::Index>(grid.size()) && d.rows() == derivatives.front().rows(),
            "derivative arrays do not match the evaluation grid", ErrorKind::GridMismatch);
  }
  // Weighted Gram: columns of `stacked` are sqrt(w)-scaled derivative curves.
  const auto p = derivatives.front().rows();
  Matrix stacked(p * static_cast<Eigen::Index>(idx.size()), K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const double sw = std::sqrt(w[q]);
      for (Eigen::Index j = 0; j < p; ++j) {
        stacked(static_cast<Eigen::Index>(q) * p + j, k) =
            sw * derivatives[static_cast<std::size_t>(k)](j, static_cast<Eigen::Index>(idx[q]));
      }
    }
  }
  return make_gamma(stacked.transpose() * stacked, trim);
}

[[nodiscard]] inline GammaMatrix estimate_gamma(const std::vector<SmoothedSource>& smoothed, double trim) {
  require(!smoothed.empty(), "no smoothed sources");
  std::vector<Matrix> d;
  d.reserve(smoothed.size());
  for (const auto& s : smoothed) {
    require(s.eval_grid == smoothed.front().eval_grid, "sources do not share an evaluation grid",
            ErrorKind::GridMismatch);
    d.push_back(s.d_hat);
  }
  return gamma_from_derivatives(d, smoothed.front().eval_grid, trim);
}

/** Oracle Gamma from simulation truth (latent derivatives on each source's grid). */
[[nodiscard]] inline GammaMatrix latent_gamma(const SourceObservations& obs, double trim) {
  require(obs.shared_grid(), "latent Gamma needs a shared grid", ErrorKind::GridMismatch);
  std::vector<Matrix> d;
  for (const auto& s : obs.sources) {
    require(s.latent_derivatives.has_value(), "latent derivatives unavailable");
    d.push_back(*s.latent_derivatives);
  }
  return gamma_from_derivatives(d, obs.sources.front().grid, trim);
}

/** Odd and even time-index halves (positions 0, 2, 4, ... and 1, 3, 5, ...). */
[[nodiscard]] inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> interleaved_halves(std::size_t n) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> halves;
  for (std::size_t i = 0; i < n; ++i) {
    (i % 2 == 0 ? halves.first : halves.second).push_back(i);
  }
  return halves;
}

/**
 * Smooths every source on `eval_grid` using only the observations with even positions,
 * then only those with odd positions, and returns the Gamma estimate from each half.
 */
[[nodiscard]] inline std::pair<GammaMatrix, GammaMatrix> split_gamma(const SourceObservations& obs,
                                                                     const TimeGrid& eval_grid,
                                                                     const SmoothingConfig& config, double trim) {
  obs.validate();
  std::vector<SmoothedSource> first;
  std::vector<SmoothedSource> second;
  for (const auto& s : obs.sources) {
    require(s.n() >= 16, "split-sample Gamma needs n >= 16");
    const auto [a, b] = interleaved_halves(s.n());
    auto half = [&](const std::vector<std::size_t>& idx) {
      Matrix y(s.y.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) {
        y.col(static_cast<Eigen::Index>(c)) = s.y.col(static_cast<Eigen::Index>(idx[c]));
      }
      return smooth_source(s.grid.subset(idx), y, eval_grid, config);
    };
    first.push_back(half(a));
    second.push_back(half(b));
  }
  return {estimate_gamma(first, trim), estimate_gamma(second, trim)};
}

}  // namespace robust_ode
