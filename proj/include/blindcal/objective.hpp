#pragma once

#include <cmath>

#include "blindcal/geometry.hpp"
#include "blindcal/model.hpp"
#include "blindcal/summation.hpp"

namespace blindcal {

struct GradientPair {
  Vector grad_xi;
  Vector grad_gamma;
  Vector grad_gamma_projected;
};

/// Per-snapshot forward images A_l xi and residuals gamma o A_l xi - y_l,
/// stored as m x p matrices (column l is snapshot l), plus f at the point.
struct ResidualCache {
  Matrix forward;
  Matrix residual;
  double objective = 0.0;
};

namespace detail {

inline void check_point(const SensingEnsemble& ensemble, const SnapshotSet& y, const EvaluationPoint& point) {
  check_consistent(ensemble, y);
  require_dimension(point.xi.size() == ensemble.n(), "xi length does not match ensemble n");
  require_dimension(point.gamma.size() == ensemble.m(), "gamma length does not match ensemble m");
}

inline double scale(const SensingEnsemble& ensemble) {
  return 1.0 / (static_cast<double>(ensemble.m()) * static_cast<double>(ensemble.p()));
}

/// (1/2mp) sum_l ||r_l||^2 over the columns of a residual matrix.
inline double half_mean_square(const Matrix& residual, double inv_mp) {
  const double total =
      tree_reduce(0, residual.cols(), [&](std::ptrdiff_t l) { return residual.col(l).squaredNorm(); });
  return 0.5 * inv_mp * total;
}

inline void refresh_residual(ResidualCache& cache, const SnapshotSet& y, const GainVector& gamma, double inv_mp) {
  cache.residual = (cache.forward.array().colwise() * gamma.array()).matrix() - y.values;
  cache.objective = half_mean_square(cache.residual, inv_mp);
}

}  // namespace detail

inline ResidualCache evaluate_residuals(const SensingEnsemble& ensemble, const SnapshotSet& y,
                                        const EvaluationPoint& point) {
  detail::check_point(ensemble, y, point);
  ResidualCache cache;
  cache.forward.resize(ensemble.m(), ensemble.p());
  for (Index l = 0; l < ensemble.p(); ++l)
    ensemble.with_snapshot(l, [&](const Matrix& a) { cache.forward.col(l).noalias() = a * point.xi; });
  detail::refresh_residual(cache, y, point.gamma, detail::scale(ensemble));
  return cache;
}

/// f(xi, gamma) = (1/2mp) sum_l ||diag(gamma) A_l xi - y_l||^2.
inline double objective_value(const SensingEnsemble& ensemble, const SnapshotSet& y, const EvaluationPoint& point) {
  return evaluate_residuals(ensemble, y, point).objective;
}

/// Signal, gain and zero-sum-projected gain gradients from cached residuals.
inline GradientPair gradients(const SensingEnsemble& ensemble, const SnapshotSet& y, const EvaluationPoint& point,
                              const ResidualCache& cache) {
  detail::check_point(ensemble, y, point);
  const double inv_mp = detail::scale(ensemble);
  GradientPair g;
  g.grad_xi = tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) {
    return ensemble.with_snapshot(l, [&](const Matrix& a) -> Vector {
      return a.transpose() * point.gamma.cwiseProduct(cache.residual.col(l));
    });
  });
  g.grad_xi *= inv_mp;
  g.grad_gamma = tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) -> Vector {
    return cache.forward.col(l).cwiseProduct(cache.residual.col(l));
  });
  g.grad_gamma *= inv_mp;
  g.grad_gamma_projected = project_zero_sum(g.grad_gamma);
  return g;
}

inline GradientPair gradients(const SensingEnsemble& ensemble, const SnapshotSet& y, const EvaluationPoint& point) {
  return gradients(ensemble, y, point, evaluate_residuals(ensemble, y, point));
}

/// Largest problem size (n + m) for which the dense Hessian is formed.
inline constexpr Index kMaxHessianSize = 2048;

/// Dense (n+m) x (n+m) Hessian of f, ordered [xi; gamma]:
///   (1/mp) sum_l [ A' G^2 A            A' diag(2 G A xi - y) ]
///                [ diag(2 G A xi - y) A  diag(A xi)^2        ]
inline Matrix hessian(const SensingEnsemble& ensemble, const SnapshotSet& y, const EvaluationPoint& point) {
  detail::check_point(ensemble, y, point);
  const Index n = ensemble.n();
  const Index m = ensemble.m();
  detail::require_parameter(n + m <= kMaxHessianSize, "dense Hessian limited to n + m <= 2048");
  const ResidualCache cache = evaluate_residuals(ensemble, y, point);
  Matrix h = tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) {
    return ensemble.with_snapshot(l, [&](const Matrix& a) -> Matrix {
      const Vector ax = cache.forward.col(l);
      const Vector cross = 2.0 * point.gamma.cwiseProduct(ax) - y.values.col(l);
      Matrix block(n + m, n + m);
      const Matrix ga = point.gamma.asDiagonal() * a;
      block.topLeftCorner(n, n).noalias() = ga.transpose() * ga;
      block.bottomLeftCorner(m, n).noalias() = cross.asDiagonal() * a;
      block.topRightCorner(n, m) = block.bottomLeftCorner(m, n).transpose();
      block.bottomRightCorner(m, m) = ax.cwiseAbs2().asDiagonal();
      return block;
    });
  });
  h *= detail::scale(ensemble);
  return h;
}

/// Limits of the finite-sample quantities as p -> infinity for Gaussian or
/// any isotropic rows, given the ground truth.
inline double expected_objective(const EvaluationPoint& point, const GroundTruth& truth) {
  return 0.5 * delta_F(point, truth);
}

inline GradientPair expected_gradients(const EvaluationPoint& point, const GroundTruth& truth) {
  detail::require_dimension(point.xi.size() == truth.x.size() && point.gamma.size() == truth.d.size(),
                            "point and ground truth dimensions differ");
  const double inv_m = 1.0 / static_cast<double>(truth.d.size());
  GradientPair g;
  g.grad_xi = inv_m * (point.gamma.squaredNorm() * point.xi - point.gamma.dot(truth.d) * truth.x);
  g.grad_gamma = inv_m * (point.xi.squaredNorm() * point.gamma - point.xi.dot(truth.x) * truth.d);
  g.grad_gamma_projected = project_zero_sum(g.grad_gamma);
  return g;
}

inline Matrix expected_hessian(const EvaluationPoint& point, const GroundTruth& truth) {
  const Index n = truth.x.size();
  const Index m = truth.d.size();
  detail::require_dimension(point.xi.size() == n && point.gamma.size() == m,
                            "point and ground truth dimensions differ");
  const double inv_m = 1.0 / static_cast<double>(m);
  Matrix h(n + m, n + m);
  h.topLeftCorner(n, n) = point.gamma.squaredNorm() * Matrix::Identity(n, n);
  h.topRightCorner(n, m) = 2.0 * point.xi * point.gamma.transpose() - truth.x * truth.d.transpose();
  h.bottomLeftCorner(m, n) = h.topRightCorner(n, m).transpose();
  h.bottomRightCorner(m, m) = point.xi.squaredNorm() * Matrix::Identity(m, m);
  return inv_m * h;
}

/// Expected initial signal (||d||_1/m) x, i.e. x* for the simplex representative.
inline SignalVector expected_initialisation(const GroundTruth& truth) {
  return (truth.d.sum() / static_cast<double>(truth.d.size())) * truth.x;
}

}  // namespace blindcal
