/**
 * @file weights.hpp
 * @brief Simplex-constrained quadratic programs for the worst-case-reward weights: plug-in,
 *        ridge, and minimum-norm stabilized solutions, plus the split-sample tolerance rule.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "robust_ode/gamma.hpp"
#include "robust_ode/random.hpp"
#include "robust_ode/types.hpp"

namespace robust_ode {

enum class WeightMethod { PlugIn, Ridge, Stabilized, Oracle };

[[nodiscard]] inline const char* ToString(WeightMethod m) {
  switch (m) {
    case WeightMethod::PlugIn:
      return "plugin";
    case WeightMethod::Ridge:
      return "ridge";
    case WeightMethod::Stabilized:
      return "stable";
    case WeightMethod::Oracle:
      return "oracle";
  }
  return "unknown";
}

/** @brief Solver failure that still carries the last iterate. */
class SolverError : public Error {
 public:
  SolverError(ErrorKind kind, const std::string& message, Vector last_iterate, double gap)
      : Error(kind, message), last_iterate_(std::move(last_iterate)), gap_(gap) {}

  [[nodiscard]] const Vector& last_iterate() const noexcept { return last_iterate_; }
  [[nodiscard]] double gap() const noexcept { return gap_; }

 private:
  Vector last_iterate_;
  double gap_;
};

/**
 * Euclidean projection onto {w : w >= 0, sum w = 1}. Sorting is stable by index so ties
 * resolve deterministically.
 */
[[nodiscard]] inline Vector project_to_simplex(const Vector& v) {
  const auto K = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] > v[b]; });
  double cumulative = 0.0;
  double theta = 0.0;
  for (Eigen::Index r = 0; r < K; ++r) {
    cumulative += v[order[static_cast<std::size_t>(r)]];
    const double candidate = (cumulative - 1.0) / static_cast<double>(r + 1);
    if (v[order[static_cast<std::size_t>(r)]] - candidate > 0.0) {
      theta = candidate;
    }
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

/** Frank-Wolfe gap of w^T G w at w: g^T w - min_i g_i with g = 2 G w. */
[[nodiscard]] inline double frank_wolfe_gap(const Matrix& G, const Vector& w) {
  const Vector g = 2.0 * (G * w);
  return g.dot(w) - g.minCoeff();
}

struct QpOptions {
  int max_iterations = 100000;
  double relative_gap = 1e-10;
};

struct QpSolution {
  Vector omega;
  double value = 0.0;
  double gap = 0.0;
  int iterations = 0;
};

namespace detail {

/**
 * Stationary point of w^T G w on the face {w_S >= 0, sum w_S = 1, w_i = 0 off S}, from the
 * minimum-norm solution of the equality-constrained KKT system. Empty when the solution
 * leaves the nonnegative orthant.
 */
[[nodiscard]] inline std::optional<Vector> face_stationary_point(const Matrix& S, const std::vector<Eigen::Index>& support) {
  const auto m = static_cast<Eigen::Index>(support.size());
  Matrix kkt = Matrix::Zero(m + 1, m + 1);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      kkt(a, b) = 2.0 * S(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(b)]);
    }
    kkt(a, m) = -1.0;
    kkt(m, a) = 1.0;
  }
  Vector rhs = Vector::Zero(m + 1);
  rhs[m] = 1.0;
  const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite() || sol.head(m).minCoeff() < -1e-12 || std::abs(sol.head(m).sum() - 1.0) > 1e-12) {
    return std::nullopt;
  }
  Vector w = Vector::Zero(S.rows());
  for (Eigen::Index a = 0; a < m; ++a) {
    w[support[static_cast<std::size_t>(a)]] = std::max(sol[a], 0.0);
  }
  return w / w.sum();
}

}  // namespace detail

/**
 * min_{w in simplex} w^T G w by accelerated projected gradient (FISTA with gradient-based
 * restart) and exact simplex projection. Every 25 iterations the current support is polished
 * by an exact face solve, which is kept when it lowers the Frank-Wolfe gap. Stops when the
 * gap is at most relative_gap * (1 + |U|). For indefinite G this finds a stationary point.
 */
[[nodiscard]] inline QpSolution minimize_quadratic_simplex(const Matrix& G, const QpOptions& options = {}) {
  require(G.rows() == G.cols() && G.rows() >= 1, "Gamma must be square and non-empty");
  const Matrix S = 0.5 * (G + G.transpose());
  const auto K = S.rows();
  QpSolution sol;
  if (K == 1) {
    sol.omega = Vector::Ones(1);
    sol.value = S(0, 0);
    return sol;
  }
  const double lipschitz = 2.0 * operator_norm(S);
  Vector x = Vector::Constant(K, 1.0 / static_cast<double>(K));
  if (!(lipschitz > 0.0)) {
    sol.omega = x;
    sol.value = x.dot(S * x);
    return sol;
  }
  const double step = 1.0 / lipschitz;
  Vector y = x;
  double momentum = 1.0;
  double gap = frank_wolfe_gap(S, x);
  double value = x.dot(S * x);
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (gap <= options.relative_gap * (1.0 + std::abs(value))) {
      break;
    }
    Vector x_next = project_to_simplex(y - step * 2.0 * (S * y));
    // Restart when the step moves against the gradient at y: drop momentum and step from x.
    if ((2.0 * (S * y)).dot(x_next - x) > 0.0) {
      momentum = 1.0;
      x_next = project_to_simplex(x - step * 2.0 * (S * x));
    }
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = x_next + ((momentum - 1.0) / next_momentum) * (x_next - x);
    x = x_next;
    momentum = next_momentum;
    value = x.dot(S * x);
    gap = frank_wolfe_gap(S, x);
    if ((it + 1) % 25 == 0 && gap > options.relative_gap * (1.0 + std::abs(value))) {
      std::vector<Eigen::Index> support;
      for (Eigen::Index i = 0; i < K; ++i) {
        if (x[i] > 1e-9) {
          support.push_back(i);
        }
      }
      if (const auto polished = detail::face_stationary_point(S, support)) {
        const double polished_gap = frank_wolfe_gap(S, *polished);
        if (polished_gap < gap) {
          x = *polished;
          y = x;
          momentum = 1.0;
          value = x.dot(S * x);
          gap = polished_gap;
        }
      }
    }
  }
  // Final exact solve on the numerical support, so a minimum of 0 comes out as 0 rather
  // than at the stopping gap.
  if (gap <= options.relative_gap * (1.0 + std::abs(value))) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < K; ++i) {
      if (x[i] > 1e-6 * x.maxCoeff()) {
        support.push_back(i);
      }
    }
    if (const auto polished = detail::face_stationary_point(S, support)) {
      const double polished_value = polished->dot(S * *polished);
      const double polished_gap = frank_wolfe_gap(S, *polished);
      if (polished_value <= value && polished_gap <= options.relative_gap * (1.0 + std::abs(polished_value))) {
        x = *polished;
        gap = polished_gap;
      }
    }
  }
  sol.omega = x;
  sol.value = x.dot(S * x);
  sol.gap = gap;
  sol.iterations = it;
  if (gap > options.relative_gap * (1.0 + std::abs(sol.value))) {
    throw SolverError(ErrorKind::MaxIterations,
                      "simplex QP did not converge; Frank-Wolfe gap " + std::to_string(gap), x, gap);
  }
  return sol;
}

/**
 * Exact minimizer of w^T A w over the simplex for symmetric positive definite A, by a
 * primal active-set method on the constraints w_i >= 0.
 */
[[nodiscard]] inline Vector minimize_definite_simplex(const Matrix& A) {
  const auto K = A.rows();
  Vector w = Vector::Constant(K, 1.0 / static_cast<double>(K));
  std::vector<bool> fixed(static_cast<std::size_t>(K), false);  // working set: w_i held at 0
  const double tol = 1e-14;
  for (int iter = 0; iter < 50 * static_cast<int>(K) + 100; ++iter) {
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < K; ++i) {
      if (!fixed[static_cast<std::size_t>(i)]) {
        free_idx.push_back(i);
      }
    }
    const auto F = static_cast<Eigen::Index>(free_idx.size());
    Matrix AFF(F, F);
    for (Eigen::Index a = 0; a < F; ++a) {
      for (Eigen::Index b = 0; b < F; ++b) {
        AFF(a, b) = A(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
      }
    }
    const Vector z = AFF.ldlt().solve(Vector::Ones(F));
    const Vector target_free = z / z.sum();
    Vector target = Vector::Zero(K);
    for (Eigen::Index a = 0; a < F; ++a) {
      target[free_idx[static_cast<std::size_t>(a)]] = target_free[a];
    }
    if (target_free.minCoeff() >= 0.0) {
      w = target;
      // Multipliers of the fixed constraints: g_i - nu with g = 2 A w and nu = 2 / sum(z).
      const Vector g = 2.0 * (A * w);
      const double nu = 2.0 / z.sum();
      Eigen::Index release = -1;
      double most_negative = -tol * (1.0 + std::abs(nu));
      for (Eigen::Index i = 0; i < K; ++i) {
        if (fixed[static_cast<std::size_t>(i)] && g[i] - nu < most_negative) {
          most_negative = g[i] - nu;
          release = i;
        }
      }
      if (release < 0) {
        return w;
      }
      fixed[static_cast<std::size_t>(release)] = false;
      continue;
    }
    // Step toward the target until the first free coordinate hits zero.
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i = 0; i < K; ++i) {
      if (!fixed[static_cast<std::size_t>(i)] && target[i] < w[i]) {
        const double a = w[i] / (w[i] - target[i]);
        if (a < alpha) {
          alpha = a;
          blocking = i;
        }
      }
    }
    w += alpha * (target - w);
    if (blocking >= 0) {
      w[blocking] = 0.0;
      fixed[static_cast<std::size_t>(blocking)] = true;
    }
    w = w.cwiseMax(0.0);
    w /= w.sum();
  }
  throw SolverError(ErrorKind::MaxIterations, "active-set simplex QP cycled", w, 0.0);
}

/** @brief A point on the simplex with the solver's diagnostics. */
struct SimplexWeights {
  Vector omega;
  double objective = 0.0;  // omega^T Gamma omega on the unfloored estimate
  WeightMethod method = WeightMethod::Stabilized;
  double tuning = 0.0;  // d_n (Stabilized / Oracle) or lambda (Ridge)

  double minimum_value = 0.0;        // U, the simplex minimum used by the constraint
  double multiplier = 0.0;           // scalarization weight mu at the returned point
  double constraint_residual = 0.0;  // omega^T Gamma omega - (U + d_n), floored Gamma
  int iterations = 0;
  double gap = 0.0;
  bool certified = false;
  double certificate_norm_gap = 0.0;  // ||omega||^2 - ||omega_direct||^2
};

struct StabilizedOptions {
  QpOptions qp;
  double max_multiplier = 1e12;  // in units of 1 / lambda_max(Gamma)
  int bisection_steps = 200;
  bool certify = false;          // run the independent alternating-projection solve
  int certificate_iterations = 20000;
};

namespace detail {

/** Projection onto {w : w^T G w <= c} for PSD G given its eigendecomposition. */
[[nodiscard]] inline Vector project_to_sublevel(const Eigen::SelfAdjointEigenSolver<Matrix>& eig, const Vector& y,
                                                double c) {
  const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
  const Vector z = eig.eigenvectors().transpose() * y;
  auto phi = [&](double mu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double d = 1.0 + mu * lambda[i];
      s += lambda[i] * z[i] * z[i] / (d * d);
    }
    return s;
  };
  if (phi(0.0) <= c) {
    return y;
  }
  double lo = 0.0;
  double hi = 1.0;
  while (phi(hi) > c && hi < 1e30) {
    lo = hi;
    hi *= 4.0;
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi(mid) > c ? lo : hi) = mid;
  }
  Vector x(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    x[i] = z[i] / (1.0 + hi * lambda[i]);
  }
  return eig.eigenvectors() * x;
}

}  // namespace detail

/**
 * Minimum-norm point of {w in simplex : w^T G w <= c} computed directly as the projection
 * of the origin onto that intersection with Dykstra's alternating projections. Used as an
 * independent certificate for stabilized_weights.
 */
[[nodiscard]] inline Vector min_norm_feasible_direct(const Matrix& G_psd, double c, int iterations) {
  const auto K = G_psd.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (G_psd + G_psd.transpose()));
  Vector x = Vector::Zero(K);
  Vector p = Vector::Zero(K);
  Vector q = Vector::Zero(K);
  Vector y = Vector::Zero(K);
  for (int it = 0; it < iterations; ++it) {
    const Vector y_next = project_to_simplex(x + p);
    p = x + p - y_next;
    const Vector x_next = detail::project_to_sublevel(eig, y_next + q, c);
    q = y_next + q - x_next;
    const double change = (x_next - x).norm() + (y_next - y).norm();
    x = x_next;
    y = y_next;
    if (change < 1e-15) {
      break;
    }
  }
  return y;
}

/**
 * argmin ||w||^2 over {w in simplex : w^T G w <= U + d_n}, G the PSD-floored estimate.
 *
 * Scalarized as min ||w||^2 + mu w^T G w, each subproblem solved exactly by the active-set
 * method; mu is bisected (geometrically, in units of 1/lambda_max) to the smallest value
 * whose solution meets the constraint to within 1e-14 of the problem scale. The reported
 * residual and the optional certificate use the looser 1e-9 (1 + U + d_n).
 */
[[nodiscard]] inline SimplexWeights stabilized_weights(const GammaMatrix& gamma, double d_n,
                                                       const StabilizedOptions& options = {}) {
  require(d_n >= 0.0 && std::isfinite(d_n), "d_n must be finite and >= 0");
  const Matrix& G = gamma.floored;
  const auto K = G.rows();
  require(K >= 1, "empty Gamma");
  SimplexWeights out;
  out.method = WeightMethod::Stabilized;
  out.tuning = d_n;
  const QpSolution base = minimize_quadratic_simplex(G, options.qp);
  out.minimum_value = base.value;
  out.iterations = base.iterations;
  out.gap = base.gap;
  const double bound = base.value + d_n;
  const double tolerance = 1e-9 * (1.0 + base.value + d_n);
  const double scale = operator_norm(G);
  // Bisection target: relative to the problem's own scale so that Gamma and c * Gamma give
  // the same weights, and far below `tolerance` because w moves like sqrt(excess) at d_n = 0.
  const double target = std::min(tolerance, 1e-14 * (scale + base.value + d_n));

  auto solve_at = [&](double nu) {
    const Matrix A = Matrix::Identity(K, K) + (scale > 0.0 ? nu / scale : 0.0) * G;
    return minimize_definite_simplex(A);
  };
  auto excess = [&](const Vector& w) { return w.dot(G * w) - bound; };

  Vector best = solve_at(0.0);
  double nu_feasible = 0.0;
  if (scale > 0.0 && excess(best) > target) {
    double nu_lo = 0.0;
    double nu_hi = 1.0;
    Vector w_hi = solve_at(nu_hi);
    while (excess(w_hi) > target && nu_hi < options.max_multiplier) {
      nu_lo = nu_hi;
      nu_hi *= 10.0;
      w_hi = solve_at(nu_hi);
    }
    if (excess(w_hi) > target) {
      throw SolverError(ErrorKind::BisectionStall,
                        "no multiplier up to the cap meets the constraint; residual " +
                            std::to_string(excess(w_hi)),
                        w_hi, excess(w_hi));
    }
    for (int step = 0; step < options.bisection_steps; ++step) {
      const double mid = nu_lo > 0.0 ? std::sqrt(nu_lo * nu_hi) : 0.5 * nu_hi;
      if (!(mid > nu_lo && mid < nu_hi) || nu_hi - nu_lo <= 1e-13 * nu_hi) {
        break;
      }
      const Vector w_mid = solve_at(mid);
      if (excess(w_mid) > target) {
        nu_lo = mid;
      } else {
        nu_hi = mid;
        w_hi = w_mid;
      }
    }
    best = w_hi;
    nu_feasible = nu_hi;
  }
  out.omega = best;
  out.multiplier = scale > 0.0 ? nu_feasible / scale : 0.0;
  out.constraint_residual = excess(best);
  out.objective = best.dot(gamma.entries * best);
  if (options.certify) {
    const Vector direct = min_norm_feasible_direct(G, bound + tolerance, options.certificate_iterations);
    out.certificate_norm_gap = best.squaredNorm() - direct.squaredNorm();
    out.certified = out.constraint_residual <= tolerance && out.certificate_norm_gap <= 1e-6;
  }
  return out;
}

/** The raw (possibly arbitrary) minimizer of w^T Gamma w, unstabilized. */
[[nodiscard]] inline SimplexWeights plug_in_weights(const GammaMatrix& gamma, const QpOptions& options = {}) {
  const QpSolution s = minimize_quadratic_simplex(gamma.entries, options);
  SimplexWeights out;
  out.omega = s.omega;
  out.objective = s.value;
  out.minimum_value = s.value;
  out.method = WeightMethod::PlugIn;
  out.iterations = s.iterations;
  out.gap = s.gap;
  return out;
}

/** argmin w^T Gamma w + lambda ||w||^2 over the simplex. */
[[nodiscard]] inline SimplexWeights ridge_weights(const GammaMatrix& gamma, double lambda,
                                                  const QpOptions& options = {}) {
  require(lambda >= 0.0 && std::isfinite(lambda), "ridge lambda must be finite and >= 0");
  const auto K = gamma.entries.rows();
  const QpSolution s = minimize_quadratic_simplex(gamma.entries + lambda * Matrix::Identity(K, K), options);
  SimplexWeights out;
  out.omega = s.omega;
  out.objective = s.omega.dot(gamma.entries * s.omega);
  out.minimum_value = s.value;
  out.method = WeightMethod::Ridge;
  out.tuning = lambda;
  out.iterations = s.iterations;
  out.gap = s.gap;
  return out;
}

/** @brief Split-sample tolerance d_n = C_d log(n) min(ratio, 1). */
struct ToleranceConfig {
  double C_d = 0.01;
  double d_n = 0.0;
  double ratio = 0.0;  // ||G_I1 - G_I2||_op / ||G||_op, before truncation
  double log_n = 0.0;
};

[[nodiscard]] inline ToleranceConfig select_tolerance(const Matrix& gamma_i1, const Matrix& gamma_i2,
                                                      const Matrix& gamma, std::size_t n, double C_d) {
  require(C_d >= 0.001 && C_d <= 1.0, "C_d must lie in [0.001, 1]");
  require(n >= 2, "n must be at least 2");
  const double denom = operator_norm(gamma);
  if (!(denom > 0.0)) {
    throw Error(ErrorKind::ZeroGamma, "operator norm of Gamma is zero");
  }
  ToleranceConfig tc;
  tc.C_d = C_d;
  tc.log_n = std::log(static_cast<double>(n));
  tc.ratio = operator_norm(gamma_i1 - gamma_i2) / denom;
  tc.d_n = C_d * tc.log_n * std::min(tc.ratio, 1.0);
  return tc;
}

enum class ToleranceRule { PlugIn, InverseSquare, LogOverN, InverseLog, Adaptive };

[[nodiscard]] inline const char* ToString(ToleranceRule r) {
  switch (r) {
    case ToleranceRule::PlugIn:
      return "plugin";
    case ToleranceRule::InverseSquare:
      return "1/n^2";
    case ToleranceRule::LogOverN:
      return "log(n)/n";
    case ToleranceRule::InverseLog:
      return "1/log(n)";
    case ToleranceRule::Adaptive:
      return "adaptive";
  }
  return "unknown";
}

/** Block-diagonal test matrix blockdiag([[1,1],[1,1]], 0, [[2,-2],[-2,2]]). */
[[nodiscard]] inline Matrix stability_gamma() {
  Matrix G = Matrix::Zero(5, 5);
  G.block(0, 0, 2, 2).setOnes();
  G(3, 3) = G(4, 4) = 2.0;
  G(3, 4) = G(4, 3) = -2.0;
  return G;
}

/** Its minimum-norm minimizer over the simplex. */
[[nodiscard]] inline Vector stability_target() {
  Vector w(5);
  w << 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0;
  return w;
}

/** Gamma + (z_{jj'}^2) with z symmetric, z_{jj'} ~ N(0, sd^2) for j <= j'. */
[[nodiscard]] inline Matrix perturbed_gamma(const Matrix& G, double sd, CounterRng& rng) {
  Matrix out = G;
  for (Eigen::Index a = 0; a < G.rows(); ++a) {
    for (Eigen::Index b = a; b < G.cols(); ++b) {
      const double z = sd * rng.normal();
      out(a, b) += z * z;
      if (a != b) {
        out(b, a) += z * z;
      }
    }
  }
  return out;
}

struct StabilityPoint {
  std::size_t n = 0;
  ToleranceRule rule = ToleranceRule::PlugIn;
  double median_loss = 0.0;
  double mean_loss = 0.0;
  std::vector<double> losses;  // one per seed, in seed order
};

/**
 * Loss ||w_hat - w*_stable|| of each rule on perturbed copies of stability_gamma() with
 * perturbation sd 1/sqrt(n). The adaptive rule draws two independent half-sample
 * perturbations (sd sqrt(2/n)) and applies select_tolerance with C_d.
 */
[[nodiscard]] inline std::vector<StabilityPoint> stability_experiment(const std::vector<std::size_t>& n_grid,
                                                                      const std::vector<ToleranceRule>& rules,
                                                                      int seeds, std::uint64_t base_seed = 2024,
                                                                      double C_d = 0.01) {
  require(seeds >= 1, "need at least one seed");
  const Matrix G = stability_gamma();
  const Vector target = stability_target();
  std::vector<StabilityPoint> out;
  for (std::size_t n : n_grid) {
    require(n >= 2, "n must be at least 2");
    const double nn = static_cast<double>(n);
    std::vector<std::vector<double>> losses(rules.size());
    for (int s = 0; s < seeds; ++s) {
      CounterRng rng(derive_key(base_seed + static_cast<std::uint64_t>(s), n));
      const Matrix G_hat = perturbed_gamma(G, 1.0 / std::sqrt(nn), rng);
      const GammaMatrix gamma = make_gamma(G_hat, 0.0);
      for (std::size_t r = 0; r < rules.size(); ++r) {
        Vector w;
        switch (rules[r]) {
          case ToleranceRule::PlugIn:
            w = plug_in_weights(gamma).omega;
            break;
          case ToleranceRule::InverseSquare:
            w = stabilized_weights(gamma, 1.0 / (nn * nn)).omega;
            break;
          case ToleranceRule::LogOverN:
            w = stabilized_weights(gamma, std::log(nn) / nn).omega;
            break;
          case ToleranceRule::InverseLog:
            w = stabilized_weights(gamma, 1.0 / std::log(nn)).omega;
            break;
          case ToleranceRule::Adaptive: {
            CounterRng half_rng(derive_key(base_seed + static_cast<std::uint64_t>(s), n + 0x5EED0000ULL));
            const Matrix g1 = perturbed_gamma(G, std::sqrt(2.0 / nn), half_rng);
            const Matrix g2 = perturbed_gamma(G, std::sqrt(2.0 / nn), half_rng);
            const ToleranceConfig tc = select_tolerance(g1, g2, G_hat, n, C_d);
            w = stabilized_weights(gamma, tc.d_n).omega;
            break;
          }
        }
        losses[r].push_back((w - target).norm());
      }
    }
    for (std::size_t r = 0; r < rules.size(); ++r) {
      StabilityPoint pt;
      pt.n = n;
      pt.rule = rules[r];
      pt.losses = losses[r];
      std::vector<double> sorted = losses[r];
      std::sort(sorted.begin(), sorted.end());
      const std::size_t m = sorted.size();
      pt.median_loss = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
      pt.mean_loss = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(m);
      out.push_back(std::move(pt));
    }
  }
  return out;
}

/** Default n grid for the stability study: 10 to 20000, roughly log-spaced. */
[[nodiscard]] inline std::vector<std::size_t> stability_n_grid() {
  return {10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000};
}

}  // namespace robust_ode
