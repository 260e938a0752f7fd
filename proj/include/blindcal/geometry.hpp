#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "blindcal/model.hpp"

namespace blindcal {

/// Current iterate (xi, gamma).
struct EvaluationPoint {
  SignalVector xi;
  GainVector gamma;
};

struct NeighbourhoodSpec {
  double kappa = 0.0;
  double rho = 0.0;
};

/// Orthogonal projection onto zero-sum vectors: v - mean(v) 1.
inline Vector project_zero_sum(const Vector& v) {
  if (v.size() == 0) return v;
  return (v.array() - v.mean()).matrix();
}

namespace detail {

inline double clipped_sum(const Vector& z, double lambda, double rho) {
  double s = 0.0;
  for (Index i = 0; i < z.size(); ++i) s += std::clamp(z[i] - lambda, -rho, rho);
  return s;
}

}  // namespace detail

/// Euclidean projection onto C_rho = {gamma : 1'gamma = m, ||gamma - 1||_inf <= rho}.
///
/// With e = gamma - 1 the projection is e_i = clip(e_i - lambda, -rho, rho)
/// where lambda zeroes the sum. The sum is piecewise linear and
/// non-increasing in lambda with breakpoints e_i -/+ rho; the bracketing
/// pair is found by binary search over the sorted breakpoints and the root
/// is then exact by linear interpolation.
inline GainVector project_C_rho(const GainVector& gamma, double rho) {
  detail::require_parameter(rho >= 0.0 && rho < 1.0, "rho must lie in [0, 1)");
  const Index m = gamma.size();
  if (m == 0) return gamma;
  if (rho == 0.0) return GainVector::Ones(m);

  const Vector z = (gamma.array() - 1.0).matrix();
  std::vector<double> breaks;
  breaks.reserve(static_cast<std::size_t>(2 * m));
  for (Index i = 0; i < m; ++i) {
    breaks.push_back(z[i] - rho);
    breaks.push_back(z[i] + rho);
  }
  std::sort(breaks.begin(), breaks.end());

  // g(breaks.front()) = m rho > 0 ... g(breaks.back()) = -m rho < 0.
  std::size_t lo = 0;
  std::size_t hi = breaks.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (detail::clipped_sum(z, breaks[mid], rho) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  const double g_lo = detail::clipped_sum(z, breaks[lo], rho);
  const double g_hi = detail::clipped_sum(z, breaks[hi], rho);
  double lambda = breaks[lo];
  if (g_lo <= 0.0) {
    lambda = breaks[lo];
  } else if (g_hi >= 0.0) {
    lambda = breaks[hi];
  } else {
    lambda = breaks[lo] + g_lo * (breaks[hi] - breaks[lo]) / (g_lo - g_hi);
  }

  // Bisection fallback for round-off in the interpolation.
  const double target = 1e-12 * static_cast<double>(m);
  if (std::abs(detail::clipped_sum(z, lambda, rho)) > target) {
    double a = breaks[lo];
    double b = breaks[hi];
    for (int it = 0; it < 200 && b - a > 0.0; ++it) {
      lambda = 0.5 * (a + b);
      const double g = detail::clipped_sum(z, lambda, rho);
      if (std::abs(g) <= target) break;
      (g > 0.0 ? a : b) = lambda;
    }
  }

  GainVector out(m);
  for (Index i = 0; i < m; ++i) out[i] = 1.0 + std::clamp(z[i] - lambda, -rho, rho);
  return out;
}

/// Delta = ||xi - x*||^2 + ||x*||^2/m ||gamma - d*||^2.
inline double delta(const EvaluationPoint& point, const GroundTruth& truth) {
  detail::require_dimension(point.xi.size() == truth.x.size() && point.gamma.size() == truth.d.size(),
                            "point and ground truth dimensions differ");
  const double m = static_cast<double>(truth.d.size());
  return (point.xi - truth.x).squaredNorm() + truth.x.squaredNorm() / m * (point.gamma - truth.d).squaredNorm();
}

/// Delta_F = (1/m) ||xi gamma' - x* d*'||_F^2, expanded so no n x m matrix is formed.
inline double delta_F(const EvaluationPoint& point, const GroundTruth& truth) {
  detail::require_dimension(point.xi.size() == truth.x.size() && point.gamma.size() == truth.d.size(),
                            "point and ground truth dimensions differ");
  const double m = static_cast<double>(truth.d.size());
  const double v = point.xi.squaredNorm() * point.gamma.squaredNorm() +
                   truth.x.squaredNorm() * truth.d.squaredNorm() -
                   2.0 * point.gamma.dot(truth.d) * point.xi.dot(truth.x);
  return std::max(v, 0.0) / m;
}

/// d = 1 + omega with omega zero-sum and ||omega||_inf = rho exactly.
/// omega is P_1perp u rescaled, u uniform on the cube [-1, 1]^m.
inline GainVector draw_gain_perturbation(Index m, double rho, std::uint64_t seed) {
  detail::require_parameter(m >= 2, "gain perturbation needs m >= 2");
  detail::require_parameter(rho > 0.0 && rho < 1.0, "gain perturbation needs 0 < rho < 1");
  Rng rng(seed);
  for (;;) {
    Vector u(m);
    for (Index i = 0; i < m; ++i) u[i] = rng.uniform_symmetric();
    Vector omega = project_zero_sum(u);
    const double peak = omega.cwiseAbs().maxCoeff();
    if (peak < 1e-12) continue;
    omega *= rho / peak;
    // Removes the residual mean left by the rescale; keeps the peak at rho.
    omega = project_zero_sum(omega);
    return (omega.array() + 1.0).matrix();
  }
}

inline bool in_C_rho(const GainVector& gamma, double rho, double slack = 1e-9) {
  const double m = static_cast<double>(gamma.size());
  return std::abs(gamma.sum() - m) <= slack * std::max(1.0, m) &&
         (gamma.array() - 1.0).abs().maxCoeff() <= rho + slack;
}

/// Closed-set membership in D_{kappa,rho} with 1e-9 additive slack.
inline bool in_neighbourhood(const EvaluationPoint& point, const NeighbourhoodSpec& spec, const GroundTruth& truth) {
  constexpr double slack = 1e-9;
  if (!in_C_rho(point.gamma, spec.rho, slack)) return false;
  return delta(point, truth) <= spec.kappa * spec.kappa * truth.x.squaredNorm() + slack;
}

}  // namespace blindcal
