#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "blindcal/baseline.hpp"
#include "blindcal/geometry.hpp"
#include "blindcal/image.hpp"
#include "blindcal/model.hpp"
#include "blindcal/parallel.hpp"
#include "blindcal/solver.hpp"

namespace blindcal {

// ---------------------------------------------------------------------------
// Synthetic instances

/// Uniform draw from the unit l2 ball: Gaussian direction, radius U^(1/n).
inline SignalVector draw_unit_ball(Index n, Rng& rng) {
  SignalVector x(n);
  for (Index j = 0; j < n; ++j) x[j] = rng.normal();
  const double norm = x.norm();
  if (norm == 0.0) return draw_unit_ball(n, rng);
  return x * (std::pow(rng.uniform(), 1.0 / static_cast<double>(n)) / norm);
}

struct Instance {
  GroundTruth truth;
  SensingEnsemble ensemble;
  SnapshotSet y;
};

/// x uniform in the unit ball, d = 1 + omega with ||omega||_inf = rho
/// (d = 1 when rho = 0), ensemble and snapshots from sub-seeds of `seed`.
inline Instance draw_instance(Index n, Index m, Index p, double rho, Distribution distribution, std::uint64_t seed) {
  Rng signal_rng(derive_seed(seed, {{"signal", 0}}));
  SignalVector x = draw_unit_ball(n, signal_rng);
  GainVector d = rho > 0.0 ? draw_gain_perturbation(m, rho, derive_seed(seed, {{"gains", 0}}))
                           : GainVector::Ones(m);
  GroundTruth truth = make_ground_truth(x, d, rho);
  auto storage = static_cast<double>(n) * static_cast<double>(m) * static_cast<double>(p) > 5e7
                     ? SensingEnsemble::Storage::Lazy
                     : SensingEnsemble::Storage::Materialized;
  SensingEnsemble ensemble =
      SensingEnsemble::generate(n, m, p, distribution, derive_seed(seed, {{"ensemble", 0}}), storage);
  SnapshotSet y = sense(ensemble, truth.x, truth.d);
  return {std::move(truth), std::move(ensemble), std::move(y)};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Largest positive residual y_i - (slope x_i + intercept).
  double max_residual = 0.0;
};

/// Ordinary least-squares line through (xs, ys).
inline LinearFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  detail::require_dimension(xs.size() == ys.size() && xs.size() >= 2, "line fit needs >= 2 matching points");
  const double k = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  detail::require_parameter(sxx > 0.0, "line fit needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < xs.size(); ++i)
    f.max_residual = std::max(f.max_residual, ys[i] - (f.slope * xs[i] + f.intercept));
  return f;
}

// ---------------------------------------------------------------------------
// Phase transition

struct PhaseGridSpec {
  Index n = 64;
  Index m = 16;
  std::vector<Index> p_values{4, 8, 16, 32, 64, 128, 256};
  std::vector<double> rho_values{1e-3, 1e-2, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99};
  int trials_per_cell = 10;
  double zeta_db = -70.0;
  std::uint64_t base_seed = 1;
  double tolerance = 1e-7;
  long max_iterations = 5000;
  bool apply_projection = true;
  Distribution distribution = Distribution::Gaussian;

  void validate() const {
    detail::require_dimension(n >= 1 && m >= 2, "phase grid needs n >= 1, m >= 2");
    detail::require_parameter(!p_values.empty() && !rho_values.empty(), "phase grid needs p and rho values");
    for (Index p : p_values) detail::require_parameter(p >= 1, "p values must be >= 1");
    for (double r : rho_values) detail::require_parameter(r >= 0.0 && r < 1.0, "rho values must lie in [0, 1)");
    detail::require_parameter(trials_per_cell >= 1, "trials_per_cell must be >= 1");
    detail::require_parameter(zeta_db < 0.0, "zeta_db must be negative");
    detail::require_parameter(tolerance > 0.0, "tolerance must be positive");
    detail::require_parameter(max_iterations >= 1, "max_iterations must be >= 1");
  }

  /// n = 2^8, m = 2^6, p = 2^2..2^10; rho capped below 1.
  static PhaseGridSpec full_scale() {
    PhaseGridSpec s;
    s.n = 256;
    s.m = 64;
    s.p_values = {4, 8, 16, 32, 64, 128, 256, 512, 1024};
    s.rho_values = {1e-3, 1e-2, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99};
    s.trials_per_cell = 1;
    return s;
  }
};

struct TrialRecord {
  Index p = 0;
  double rho = 0.0;
  int trial = 0;
  bool success = false;
  double error_db = 0.0;
  long iterations = 0;
  std::string outcome;
};

struct PhaseGridResult {
  std::vector<Index> p_values;
  std::vector<double> rho_values;
  int trials_per_cell = 0;
  /// successes(ip, ir) and success_probability(ip, ir) = successes / trials.
  Eigen::MatrixXi successes;
  Matrix success_probability;
  std::vector<TrialRecord> records;
};

inline std::uint64_t trial_seed(std::uint64_t base, std::size_t cell, int trial) {
  return derive_seed(base, {{"cell", cell}, {"trial", static_cast<std::uint64_t>(trial)}});
}

/// One trial of the grid. Divergence or any solver error counts as failure.
inline TrialRecord run_phase_trial(const PhaseGridSpec& spec, Index p, double rho, std::uint64_t seed) {
  TrialRecord rec;
  rec.p = p;
  rec.rho = rho;
  const Instance inst = draw_instance(spec.n, spec.m, p, rho, spec.distribution, seed);
  SolverConfig config;
  config.rho = rho;
  config.objective_tolerance = spec.tolerance;
  config.max_iterations = spec.max_iterations;
  config.apply_projection = spec.apply_projection;
  config.record_trace = false;
  try {
    const SolveResult r = solve(inst.ensemble, inst.y, config);
    const double err = max_relative_error(r.x_hat, r.d_hat, inst.truth);
    rec.error_db = std::isfinite(err) ? to_db(err) : 0.0;
    rec.success = std::isfinite(err) && rec.error_db < spec.zeta_db;
    rec.iterations = r.iterations;
    rec.outcome = std::string(to_string(r.stop_reason));
  } catch (const DivergenceError& e) {
    rec.success = false;
    rec.iterations = e.iteration();
    rec.outcome = "diverged";
  }
  return rec;
}

inline PhaseGridResult run_phase_transition(const PhaseGridSpec& spec, unsigned workers = 1) {
  spec.validate();
  const std::size_t n_rho = spec.rho_values.size();
  const std::size_t cells = spec.p_values.size() * n_rho;
  const std::size_t trials = static_cast<std::size_t>(spec.trials_per_cell);
  std::vector<TrialRecord> records(cells * trials);
  parallel_for(records.size(), workers, [&](std::size_t k) {
    const std::size_t cell = k / trials;
    const int t = static_cast<int>(k % trials);
    const Index p = spec.p_values[cell / n_rho];
    const double rho = spec.rho_values[cell % n_rho];
    records[k] = run_phase_trial(spec, p, rho, trial_seed(spec.base_seed, cell, t));
    records[k].trial = t;
  });

  PhaseGridResult out;
  out.p_values = spec.p_values;
  out.rho_values = spec.rho_values;
  out.trials_per_cell = spec.trials_per_cell;
  out.successes = Eigen::MatrixXi::Zero(static_cast<Index>(spec.p_values.size()), static_cast<Index>(n_rho));
  for (std::size_t k = 0; k < records.size(); ++k) {
    const std::size_t cell = k / trials;
    if (records[k].success) ++out.successes(static_cast<Index>(cell / n_rho), static_cast<Index>(cell % n_rho));
  }
  out.success_probability = out.successes.cast<double>() / static_cast<double>(spec.trials_per_cell);
  out.records = std::move(records);
  return out;
}

struct MonotonicityReport {
  int pairs = 0;
  int inversions = 0;
  double worst_inversion = 0.0;
};

/// Counts adjacent-cell pairs where the success probability goes the wrong
/// way: decreasing as p grows, or increasing as rho grows.
inline MonotonicityReport check_monotonicity(const PhaseGridResult& r) {
  MonotonicityReport rep;
  const Matrix& pr = r.success_probability;
  auto visit = [&](double drop) {
    ++rep.pairs;
    if (drop > 0.0) {
      ++rep.inversions;
      rep.worst_inversion = std::max(rep.worst_inversion, drop);
    }
  };
  for (Index i = 0; i + 1 < pr.rows(); ++i)
    for (Index j = 0; j < pr.cols(); ++j) visit(pr(i, j) - pr(i + 1, j));
  for (Index i = 0; i < pr.rows(); ++i)
    for (Index j = 0; j + 1 < pr.cols(); ++j) visit(pr(i, j + 1) - pr(i, j));
  return rep;
}

// ---------------------------------------------------------------------------
// Imaging demo

struct DemoParams {
  Index m = 64;
  /// 0 selects p = 2n/m.
  Index p = 0;
  double rho = 0.99;
  std::uint64_t seed = 1;
  double tolerance = 1e-6;
  long max_iterations = 100000;
  bool apply_projection = true;
};

struct ChannelReport {
  double signal_error_db = 0.0;
  double gain_error_db = 0.0;
  double error_db = 0.0;
  double ls_error_db = 0.0;
  long iterations = 0;
  StopReason stop_reason = StopReason::MaxIterations;
  double objective = 0.0;
};

struct DemoReport {
  Index n = 0;
  Index m = 0;
  Index p = 0;
  double rho = 0.0;
  std::vector<ChannelReport> channels;
  /// Worst channel of max{gain error, signal error}, in dB.
  double error_db = 0.0;
  /// Worst channel of the calibration-free least-squares error, in dB.
  double ls_error_db = 0.0;
  long iterations = 0;
  StopReason stop_reason = StopReason::Converged;
  /// Gain map error of alpha d_hat against the true d, alpha = ||d||_1/m, in dB.
  double gain_map_error_db = 0.0;
  Image x_hat;
  Image x_ls;
  GainVector d_hat;
  GainVector d_true;
};

/// Side of the square sensor grid, or 0 when m is not a perfect square.
inline int square_side(Index m) {
  const auto s = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m))));
  return s * s == m ? static_cast<int>(s) : 0;
}

/// Gains as a grey image; values are mapped by v / 2 so 1 sits at mid-grey.
inline Image gain_image(const GainVector& d) {
  Image img;
  const int side = square_side(d.size());
  img.width = side > 0 ? side : static_cast<int>(d.size());
  img.height = side > 0 ? side : 1;
  img.planes.push_back(0.5 * d);
  return img;
}

/// Blind calibration of one image through a randomised sensor array. All
/// channels share the ensemble and the gains and are solved independently.
inline DemoReport run_imaging_demo(const Image& image, const DemoParams& params) {
  detail::require_parameter(image.channels() >= 1 && image.pixels() >= 1, "demo needs a non-empty image");
  detail::require_parameter(params.m >= 2, "demo needs m >= 2");
  detail::require_parameter(params.rho >= 0.0 && params.rho < 1.0, "rho must lie in [0, 1)");
  const Index n = image.pixels();
  const Index m = params.m;
  const Index p = params.p > 0 ? params.p : std::max<Index>(1, (2 * n + m - 1) / m);

  const GainVector d = params.rho > 0.0
                           ? draw_gain_perturbation(m, params.rho, derive_seed(params.seed, {{"gains", 0}}))
                           : GainVector::Ones(m);
  const auto storage = static_cast<double>(n) * static_cast<double>(m) * static_cast<double>(p) > 5e7
                           ? SensingEnsemble::Storage::Lazy
                           : SensingEnsemble::Storage::Materialized;
  const SensingEnsemble ensemble =
      SensingEnsemble::generate(n, m, p, Distribution::Gaussian, derive_seed(params.seed, {{"ensemble", 0}}), storage);

  DemoReport rep;
  rep.n = n;
  rep.m = m;
  rep.p = p;
  rep.rho = params.rho;
  rep.d_true = d;
  rep.x_hat.width = rep.x_ls.width = image.width;
  rep.x_hat.height = rep.x_ls.height = image.height;
  rep.error_db = -std::numeric_limits<double>::infinity();
  rep.ls_error_db = -std::numeric_limits<double>::infinity();
  rep.d_hat = GainVector::Zero(m);

  SolverConfig config;
  config.rho = params.rho;
  config.objective_tolerance = params.tolerance;
  config.max_iterations = params.max_iterations;
  config.apply_projection = params.apply_projection;
  config.record_trace = false;

  for (const Vector& plane : image.planes) {
    const GroundTruth truth = make_ground_truth(plane, d, params.rho);
    const SnapshotSet y = sense(ensemble, truth.x, truth.d);
    const SolveResult r = solve(ensemble, y, config);
    const SignalVector ls = least_squares_baseline(ensemble, y);

    ChannelReport ch;
    const double xs = truth.x.norm();
    ch.signal_error_db = to_db((r.x_hat - truth.x).norm() / xs);
    ch.gain_error_db = to_db((r.d_hat - truth.d).norm() / truth.d.norm());
    ch.error_db = std::max(ch.signal_error_db, ch.gain_error_db);
    ch.ls_error_db = to_db((ls - truth.x).norm() / xs);
    ch.iterations = r.iterations;
    ch.stop_reason = r.stop_reason;
    ch.objective = r.objective;

    rep.error_db = std::max(rep.error_db, ch.error_db);
    rep.ls_error_db = std::max(rep.ls_error_db, ch.ls_error_db);
    rep.iterations = std::max(rep.iterations, r.iterations);
    if (r.stop_reason != StopReason::Converged) rep.stop_reason = r.stop_reason;
    rep.d_hat += r.d_hat;
    rep.x_hat.planes.push_back(r.x_hat);
    rep.x_ls.planes.push_back(ls);
    rep.channels.push_back(ch);
  }
  rep.d_hat /= static_cast<double>(image.channels());
  const double alpha = d.sum() / static_cast<double>(m);
  rep.gain_map_error_db = to_db((alpha * rep.d_hat - d).norm() / d.norm());
  return rep;
}

// ---------------------------------------------------------------------------
// Rate comparison

struct RateInstanceSpec {
  Index n = 64;
  Index m = 16;
  Index p = 64;
  double rho = 0.3;
  std::uint64_t seed = 1;
  double tolerance = 1e-7;
  double fixed_step = 1e-4;
  long max_iterations = 200000;
  bool apply_projection = true;
  Distribution distribution = Distribution::Gaussian;
};

struct RateComparison {
  GroundTruth truth;
  SolveResult line_search;
  SolveResult fixed;
  double line_search_error_db = 0.0;
  double fixed_error_db = 0.0;
};

/// Same instance solved twice: exact line searches, then fixed steps.
inline RateComparison run_rate_comparison(const RateInstanceSpec& spec) {
  const Instance inst = draw_instance(spec.n, spec.m, spec.p, spec.rho, spec.distribution, spec.seed);
  SolverConfig config;
  config.rho = spec.rho;
  config.objective_tolerance = spec.tolerance;
  config.max_iterations = spec.max_iterations;
  config.apply_projection = spec.apply_projection;
  config.record_trace = true;

  RateComparison out{inst.truth, {}, {}, 0.0, 0.0};
  out.line_search = solve(inst.ensemble, inst.y, config, inst.truth);
  config.step_mode = StepMode::Fixed;
  config.fixed_step = spec.fixed_step;
  out.fixed = solve(inst.ensemble, inst.y, config, inst.truth);
  out.line_search_error_db = to_db(max_relative_error(out.line_search.x_hat, out.line_search.d_hat, inst.truth));
  out.fixed_error_db = to_db(max_relative_error(out.fixed.x_hat, out.fixed.d_hat, inst.truth));
  return out;
}

/// Least-squares fit of log(Delta_k) against k over a trace with ground truth.
inline LinearFit fit_log_delta(const SolverTrace& trace) {
  std::vector<double> ks, logs;
  for (const auto& r : trace.records) {
    if (r.delta && *r.delta > 0.0) {
      ks.push_back(static_cast<double>(r.iteration));
      logs.push_back(std::log(*r.delta));
    }
  }
  return fit_line(ks, logs);
}

// ---------------------------------------------------------------------------
// Concentration and initialisation studies

struct ConcentrationResult {
  /// max over trials of ||(1/mp) sum theta_i (a a' - I)||_2 / ||theta||_inf
  double max_deviation = 0.0;
  double mean_deviation = 0.0;
  std::vector<double> per_trial;
};

inline ConcentrationResult check_concentration(Index n, Index m, Index p, Distribution distribution,
                                               const Vector& theta, int trials, std::uint64_t seed) {
  detail::require_dimension(n >= 1 && m >= 1 && p >= 1, "dimensions must be >= 1");
  detail::require_dimension(theta.size() == m, "theta must have length m");
  detail::require_parameter(n <= 512, "dense eigen-computation limited to n <= 512");
  detail::require_parameter(trials >= 1, "trials must be >= 1");
  ConcentrationResult out;
  const double theta_inf = theta.cwiseAbs().maxCoeff();
  out.per_trial.assign(static_cast<std::size_t>(trials), 0.0);
  if (theta_inf == 0.0) return out;
  const double inv_mp = 1.0 / (static_cast<double>(m) * static_cast<double>(p));
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t s = derive_seed(seed, {{"trial", static_cast<std::uint64_t>(t)}});
    Matrix acc = tree_reduce(0, p, [&](std::ptrdiff_t l) -> Matrix {
      const Matrix a = SensingEnsemble::generate_snapshot(n, m, distribution, s, l);
      return a.transpose() * theta.asDiagonal() * a;
    });
    acc *= inv_mp;
    acc.diagonal().array() -= theta.sum() / static_cast<double>(m);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(acc, Eigen::EigenvaluesOnly);
    const double spectral = eig.eigenvalues().cwiseAbs().maxCoeff();
    out.per_trial[static_cast<std::size_t>(t)] = spectral / theta_inf;
  }
  for (double v : out.per_trial) {
    out.max_deviation = std::max(out.max_deviation, v);
    out.mean_deviation += v;
  }
  out.mean_deviation /= static_cast<double>(trials);
  return out;
}

struct InitStudyPoint {
  Index p = 0;
  double mp = 0.0;
  /// Mean over trials of log(||xi_0 - x*|| / ||x*||).
  double mean_log_error = 0.0;
};

struct InitStudyResult {
  std::vector<InitStudyPoint> points;
  /// Slope of mean_log_error against log(mp).
  double slope = 0.0;
  double intercept = 0.0;
};

/// Distance of the initial signal to x* as the number of measurements grows.
inline InitStudyResult run_init_study(Index n, Index m, const std::vector<Index>& p_values, double rho, int trials,
                                      std::uint64_t seed, Distribution distribution = Distribution::Gaussian,
                                      unsigned workers = 1) {
  detail::require_parameter(p_values.size() >= 2, "init study needs at least two p values");
  detail::require_parameter(trials >= 1, "trials must be >= 1");
  InitStudyResult out;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < p_values.size(); ++k) {
    const Index p = p_values[k];
    std::vector<double> logs(static_cast<std::size_t>(trials));
    parallel_for(logs.size(), workers, [&](std::size_t t) {
      const std::uint64_t s = derive_seed(seed, {{"p", static_cast<std::uint64_t>(p)}, {"trial", t}});
      const Instance inst = draw_instance(n, m, p, rho, distribution, s);
      const EvaluationPoint init = initialise(inst.ensemble, inst.y);
      logs[t] = std::log((init.xi - inst.truth.x).norm() / inst.truth.x.norm());
    });
    InitStudyPoint pt;
    pt.p = p;
    pt.mp = static_cast<double>(m) * static_cast<double>(p);
    for (double v : logs) pt.mean_log_error += v;
    pt.mean_log_error /= static_cast<double>(trials);
    out.points.push_back(pt);
    xs.push_back(std::log(pt.mp));
    ys.push_back(pt.mean_log_error);
  }
  const LinearFit f = fit_line(xs, ys);
  out.slope = f.slope;
  out.intercept = f.intercept;
  return out;
}

}  // namespace blindcal
