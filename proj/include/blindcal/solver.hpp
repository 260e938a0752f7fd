#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blindcal/geometry.hpp"
#include "blindcal/model.hpp"
#include "blindcal/objective.hpp"

namespace blindcal {

enum class StepMode { LineSearch, Fixed };

inline std::string_view to_string(StepMode mode) { return mode == StepMode::LineSearch ? "line-search" : "fixed"; }

struct SolverConfig {
  StepMode step_mode = StepMode::LineSearch;
  /// Signal step mu for Fixed mode; the gain step is mu m / ||xi_0||^2.
  double fixed_step = 1e-4;
  double rho = 0.0;
  double objective_tolerance = 1e-7;
  long max_iterations = 100000;
  bool apply_projection = true;
  bool record_trace = true;
  /// Stop as Stagnated when f decreased by less than this fraction over the window.
  double stagnation_threshold = 1e-14;
  long stagnation_window = 100;

  void validate() const {
    detail::require_parameter(objective_tolerance > 0.0, "objective tolerance must be positive");
    detail::require_parameter(max_iterations >= 1, "max_iterations must be >= 1");
    detail::require_parameter(rho >= 0.0 && rho < 1.0, "rho must lie in [0, 1)");
    detail::require_parameter(step_mode != StepMode::Fixed || fixed_step > 0.0, "fixed step must be positive");
    detail::require_parameter(stagnation_window >= 1, "stagnation window must be >= 1");
  }
};

struct SolverState {
  SignalVector xi;
  GainVector gamma;
  long iteration = 0;
  double objective = 0.0;
  /// ||xi_0||^2, used by the fixed gain step.
  double initial_signal_norm_sq = 0.0;
  ResidualCache cache;
};

struct TraceRecord {
  long iteration = 0;
  double objective = 0.0;
  double mu_xi = 0.0;
  double mu_gamma = 0.0;
  std::optional<double> delta;
  std::optional<double> delta_F;
  double elapsed_seconds = 0.0;
};

struct SolverTrace {
  std::vector<TraceRecord> records;
};

enum class StopReason { Converged, MaxIterations, Stagnated };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::Converged:
      return "converged";
    case StopReason::MaxIterations:
      return "max-iterations";
    case StopReason::Stagnated:
      return "stagnated";
  }
  return "unknown";
}

struct SolveResult {
  SignalVector x_hat;
  GainVector d_hat;
  SolverTrace trace;
  StopReason stop_reason = StopReason::MaxIterations;
  long iterations = 0;
  double objective = 0.0;
};

struct StepSizes {
  double mu_xi = 0.0;
  double mu_gamma = 0.0;
};

/// xi_0 = (1/mp) sum_l A_l' y_l, gamma_0 = 1.
inline EvaluationPoint initialise(const SensingEnsemble& ensemble, const SnapshotSet& y) {
  check_consistent(ensemble, y);
  Vector xi = tree_reduce(0, ensemble.p(), [&](std::ptrdiff_t l) {
    return ensemble.with_snapshot(l, [&](const Matrix& a) -> Vector { return a.transpose() * y.values.col(l); });
  });
  xi *= detail::scale(ensemble);
  return {std::move(xi), GainVector::Ones(ensemble.m())};
}

inline SolverState make_state(const SensingEnsemble& ensemble, const SnapshotSet& y, EvaluationPoint point) {
  SolverState s;
  s.cache = evaluate_residuals(ensemble, y, point);
  s.objective = s.cache.objective;
  s.initial_signal_norm_sq = point.xi.squaredNorm();
  s.xi = std::move(point.xi);
  s.gamma = std::move(point.gamma);
  return s;
}

namespace detail {

struct LineSearchResult {
  StepSizes steps;
  /// A_l grad_xi per snapshot (m x p), reused to update the forward cache.
  Matrix forward_direction;
};

/// Forward images of the signal direction, A_l g for every l.
inline Matrix forward_images(const SensingEnsemble& ensemble, const Vector& direction) {
  Matrix out(ensemble.m(), ensemble.p());
  for (Index l = 0; l < ensemble.p(); ++l)
    ensemble.with_snapshot(l, [&](const Matrix& a) { out.col(l).noalias() = a * direction; });
  return out;
}

/// argmin_u sum_l ||r_l - u s_l||^2 = sum <r_l, s_l> / sum ||s_l||^2, zero when s vanishes.
inline double quadratic_step(const Matrix& residual, const Matrix& image) {
  const double num =
      tree_reduce(0, residual.cols(), [&](std::ptrdiff_t l) { return residual.col(l).dot(image.col(l)); });
  const double den = tree_reduce(0, image.cols(), [&](std::ptrdiff_t l) { return image.col(l).squaredNorm(); });
  if (!(den > 0.0) || !std::isfinite(den)) return 0.0;
  return num / den;
}

inline LineSearchResult line_search(const SensingEnsemble& ensemble, const SolverState& state,
                                    const GradientPair& g) {
  LineSearchResult out;
  out.forward_direction = forward_images(ensemble, g.grad_xi);
  // Image of the xi direction under xi -> diag(gamma) A_l xi.
  const Matrix signal_image = (out.forward_direction.array().colwise() * state.gamma.array()).matrix();
  // Image of the gamma direction under gamma -> diag(A_l xi) gamma.
  const Matrix gain_image = (state.cache.forward.array().colwise() * g.grad_gamma_projected.array()).matrix();
  out.steps.mu_xi = g.grad_xi.squaredNorm() > 0.0 ? quadratic_step(state.cache.residual, signal_image) : 0.0;
  out.steps.mu_gamma =
      g.grad_gamma_projected.squaredNorm() > 0.0 ? quadratic_step(state.cache.residual, gain_image) : 0.0;
  return out;
}

}  // namespace detail

/// Exact minimisers of f along -grad_xi (gamma fixed) and along the projected
/// gain gradient (xi fixed). Both 1-D problems are quadratics.
inline StepSizes exact_line_search(const SolverState& state, const SensingEnsemble& ensemble, const SnapshotSet& y) {
  const EvaluationPoint point{state.xi, state.gamma};
  const GradientPair g = gradients(ensemble, y, point, state.cache);
  return detail::line_search(ensemble, state, g).steps;
}

/// Refresh period (iterations) for recomputing A_l xi from scratch.
inline constexpr long kForwardRefreshPeriod = 100;

/// One projected gradient step. Returns the step sizes used.
inline StepSizes iterate_in_place(SolverState& state, const SolverConfig& config, const SensingEnsemble& ensemble,
                                  const SnapshotSet& y) {
  const EvaluationPoint point{state.xi, state.gamma};
  const GradientPair g = gradients(ensemble, y, point, state.cache);
  StepSizes steps;
  Matrix forward_direction;
  if (config.step_mode == StepMode::LineSearch) {
    auto ls = detail::line_search(ensemble, state, g);
    steps = ls.steps;
    forward_direction = std::move(ls.forward_direction);
  } else {
    steps.mu_xi = config.fixed_step;
    steps.mu_gamma = state.initial_signal_norm_sq > 0.0
                         ? config.fixed_step * static_cast<double>(ensemble.m()) / state.initial_signal_norm_sq
                         : 0.0;
    forward_direction = detail::forward_images(ensemble, g.grad_xi);
  }

  state.xi -= steps.mu_xi * g.grad_xi;
  state.gamma -= steps.mu_gamma * g.grad_gamma_projected;
  if (config.apply_projection) state.gamma = project_C_rho(state.gamma, config.rho);
  ++state.iteration;

  if (state.iteration % kForwardRefreshPeriod == 0) {
    state.cache = evaluate_residuals(ensemble, y, {state.xi, state.gamma});
  } else {
    state.cache.forward -= steps.mu_xi * forward_direction;
    detail::refresh_residual(state.cache, y, state.gamma, detail::scale(ensemble));
  }
  state.objective = state.cache.objective;
  if (!std::isfinite(state.objective))
    throw DivergenceError(state.iteration, "objective became non-finite at iteration " +
                                               std::to_string(state.iteration));
  return steps;
}

inline SolverState iterate(SolverState state, const SolverConfig& config, const SensingEnsemble& ensemble,
                           const SnapshotSet& y) {
  iterate_in_place(state, config, ensemble, y);
  return state;
}

/// Every iteration is traced up to this index, then every 10th.
inline constexpr long kDenseTraceLimit = 10000;

inline SolveResult solve(const SensingEnsemble& ensemble, const SnapshotSet& y, const SolverConfig& config,
                         const std::optional<GroundTruth>& truth = std::nullopt) {
  config.validate();
  check_consistent(ensemble, y);
  if (truth) {
    detail::require_dimension(truth->x.size() == ensemble.n() && truth->d.size() == ensemble.m(),
                              "ground truth does not match ensemble");
  }
  const auto start = std::chrono::steady_clock::now();
  SolverState state = make_state(ensemble, y, initialise(ensemble, y));

  SolveResult result;
  auto record = [&](const StepSizes& steps) {
    TraceRecord r;
    r.iteration = state.iteration;
    r.objective = state.objective;
    r.mu_xi = steps.mu_xi;
    r.mu_gamma = steps.mu_gamma;
    if (truth) {
      const EvaluationPoint p{state.xi, state.gamma};
      r.delta = delta(p, *truth);
      r.delta_F = delta_F(p, *truth);
    }
    r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trace.records.push_back(std::move(r));
  };
  if (config.record_trace) record({});

  std::deque<double> window{state.objective};
  StopReason reason = StopReason::MaxIterations;
  StepSizes last_steps;
  bool last_recorded = true;
  while (true) {
    if (state.objective < config.objective_tolerance) {
      reason = StopReason::Converged;
      break;
    }
    if (state.iteration >= config.max_iterations) {
      reason = StopReason::MaxIterations;
      break;
    }
    last_steps = iterate_in_place(state, config, ensemble, y);
    last_recorded = state.iteration <= kDenseTraceLimit || state.iteration % 10 == 0;
    if (config.record_trace && last_recorded) record(last_steps);

    window.push_back(state.objective);
    if (static_cast<long>(window.size()) > config.stagnation_window + 1) window.pop_front();
    if (static_cast<long>(window.size()) == config.stagnation_window + 1 &&
        state.objective >= config.objective_tolerance) {
      const double old = window.front();
      if (old > 0.0 && (old - state.objective) / old < config.stagnation_threshold) {
        reason = StopReason::Stagnated;
        break;
      }
    }
  }
  // The final iterate is always traced.
  if (config.record_trace && !last_recorded) record(last_steps);

  result.x_hat = std::move(state.xi);
  result.d_hat = std::move(state.gamma);
  result.stop_reason = reason;
  result.iterations = state.iteration;
  result.objective = state.objective;
  return result;
}

/// Theory constants for the fixed-step analysis.
struct ContractionDiagnostics {
  double eta = 0.0;
  double L = 0.0;
  double tau = 0.0;
  /// 1 - eta mu + (L^2/tau) mu^2
  double factor = 1.0;
  /// Upper end of the admissible step range, tau eta / L^2 (<= 0 when eta <= 0).
  double max_step = 0.0;
  /// Step minimising the factor, tau eta / (2 L^2).
  double optimal_step = 0.0;
  std::optional<std::string> warning;
};

inline ContractionDiagnostics contraction_diagnostics(double rho, double delta_param, double kappa,
                                                      double x_star_norm, Index m, double mu) {
  detail::require_parameter(m >= 1, "m must be >= 1");
  ContractionDiagnostics d;
  d.eta = 2.0 * (1.0 - 9.0 * rho - 2.0 * delta_param);
  d.L = 4.0 * std::sqrt(2.0) * (1.0 + rho + (1.0 + kappa) * x_star_norm);
  d.tau = std::min(1.0, x_star_norm * x_star_norm / static_cast<double>(m));
  const double l2 = d.L * d.L;
  d.factor = 1.0 - d.eta * mu + (l2 / d.tau) * mu * mu;
  d.max_step = d.tau * d.eta / l2;
  d.optimal_step = d.tau * d.eta / (2.0 * l2);
  if (d.eta <= 0.0) {
    d.warning = "eta <= 0: rho >= (1 - 2 delta)/9, fixed-step convergence is not covered by the theory";
  } else if (mu > 0.0 && mu >= d.max_step) {
    d.warning = "mu outside (0, tau eta / L^2): no guaranteed contraction";
  }
  return d;
}

/// Relative recovery error max{||d_hat - d*||/||d*||, ||x_hat - x*||/||x*||}.
inline double max_relative_error(const SignalVector& x_hat, const GainVector& d_hat, const GroundTruth& truth) {
  const double ex = (x_hat - truth.x).norm() / truth.x.norm();
  const double ed = (d_hat - truth.d).norm() / truth.d.norm();
  return std::max(ex, ed);
}

/// 20 log10(r) for relative-error ratios.
inline double to_db(double ratio) { return 20.0 * std::log10(ratio); }

}  // namespace blindcal
