#pragma once

#include <cmath>

#include "blindcal/model.hpp"
#include "blindcal/summation.hpp"

namespace blindcal {

struct LeastSquaresOptions {
  double relative_tolerance = 1e-10;
  /// 0 selects 4 n.
  long max_iterations = 0;
  /// Iterations without a new best residual before giving up.
  long stagnation_window = 50;
};

/// Calibration-free estimate: minimises f(xi, 1) over xi with conjugate
/// gradients on the normal equations (sum_l A_l'A_l) xi = sum_l A_l' y_l.
/// Each iteration costs one forward and one adjoint pass over the ensemble.
inline SignalVector least_squares_baseline(const SensingEnsemble& ensemble, const SnapshotSet& y,
                                           const LeastSquaresOptions& options = {}) {
  check_consistent(ensemble, y);
  const Index n = ensemble.n();
  detail::require_parameter(ensemble.m() * ensemble.p() >= n, "least squares needs mp >= n");

  auto normal_op = [&](const Vector& v) {
    return tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) {
      return ensemble.with_snapshot(l, [&](const Matrix& a) -> Vector { return a.transpose() * (a * v); });
    });
  };
  const Vector rhs = tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) {
    return ensemble.with_snapshot(l, [&](const Matrix& a) -> Vector { return a.transpose() * y.values.col(l); });
  });

  Vector x = Vector::Zero(n);
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return x;

  Vector r = rhs;
  Vector d = r;
  double rr = r.squaredNorm();
  double best = std::sqrt(rr);
  long since_best = 0;
  const long max_it = options.max_iterations > 0 ? options.max_iterations : 4 * n;
  for (long it = 0; it < max_it; ++it) {
    if (std::sqrt(rr) <= options.relative_tolerance * rhs_norm) return x;
    const Vector q = normal_op(d);
    const double dq = d.dot(q);
    if (!(dq > 0.0)) throw SingularityError("normal equations are singular (zero curvature direction)");
    const double alpha = rr / dq;
    x += alpha * d;
    // Recompute the true residual periodically to limit drift.
    if ((it + 1) % 50 == 0)
      r = rhs - normal_op(x);
    else
      r -= alpha * q;
    const double rr_new = r.squaredNorm();
    d = r + (rr_new / rr) * d;
    rr = rr_new;
    if (std::sqrt(rr) < best * (1.0 - 1e-3)) {
      best = std::sqrt(rr);
      since_best = 0;
    } else if (++since_best >= options.stagnation_window) {
      throw SingularityError("least squares residual stagnated; normal equations are rank deficient");
    }
  }
  if (std::sqrt(rr) <= options.relative_tolerance * rhs_norm) return x;
  throw SingularityError("least squares did not reach tolerance; normal equations are ill conditioned");
}

}  // namespace blindcal
