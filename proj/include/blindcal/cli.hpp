#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blindcal/experiments.hpp"
#include "blindcal/image.hpp"
#include "blindcal/io.hpp"
#include "blindcal/solver.hpp"

namespace blindcal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad configuration file content; reported as a usage error.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::uint64_t seed = 1;
  std::string output_dir;
  unsigned workers = 1;
  std::string config;
};

namespace detail {

inline std::string json_scalar(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ConfigError("config key '" + key + "': expected a number, string or boolean");
}

/// Last object key that starts before `byte`, for locating JSON syntax errors.
inline std::string key_before(const std::string& text, std::size_t byte) {
  std::string key;
  const std::size_t end = std::min(byte, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] != '"') continue;
    std::size_t j = i + 1;
    while (j < text.size() && text[j] != '"') j += text[j] == '\\' ? 2 : 1;
    if (j >= text.size()) break;
    std::size_t k = j + 1;
    while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
    if (k < text.size() && text[k] == ':') key = text.substr(i + 1, j - i - 1);
    i = j;
  }
  return key;
}

/// Applies JSON config values to options of `app` that were not given on the
/// command line. Keys are the long flag names without dashes.
inline void apply_config(CLI::App& app, const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::string key = key_before(text, e.byte);
    throw ConfigError("config '" + path + "': malformed JSON" + (key.empty() ? "" : " at key '" + key + "'") +
                      ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config '" + path + "': top level must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "config") throw ConfigError("config key 'config' is not allowed inside a config file");
    CLI::Option* opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError("config key '" + key + "': unknown option for '" + app.get_name() + "'");
    if (opt->count() > 0) continue;
    opt->clear();
    try {
      if (value.is_array()) {
        for (const auto& item : value) opt->add_result(json_scalar(item, key));
      } else {
        opt->add_result(json_scalar(value, key));
      }
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key '" + key + "': invalid value " + value.dump() + " (" + e.what() + ")");
    }
  }
}

inline std::filesystem::path output_dir(const GlobalOptions& g) {
  std::string dir = g.output_dir;
  if (dir.empty()) {
    const char* env = std::getenv("BLINDCAL_OUTPUT_DIR");
    dir = env != nullptr && *env != '\0' ? env : ".";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  io::write_file(path.string(), j.dump(2) + "\n");
}

inline void write_vector(const std::filesystem::path& stem, const Vector& v, const std::string& format) {
  if (format == "bin")
    io::write_binary(stem.string() + ".bcal", io::to_array(v));
  else
    io::write_matrix_csv(stem.string() + ".csv", v);
}

inline StepMode parse_step(const std::string& s) {
  if (s == "line-search") return StepMode::LineSearch;
  if (s == "fixed") return StepMode::Fixed;
  throw ParameterError("unknown step mode '" + s + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SolveOptions {
  Index n = 64;
  Index m = 16;
  Index p = 64;
  double rho = 0.05;
  std::string distribution = "gaussian";
  double tol = 1e-7;
  long max_iterations = 100000;
  std::string step = "line-search";
  double mu = 1e-4;
  bool no_projection = false;
  std::string ensemble_path;
  std::string snapshots_path;
  std::string format = "csv";
};

inline int run_solve(const SolveOptions& o, const GlobalOptions& g, std::ostream& out) {
  SolverConfig config;
  config.rho = o.rho;
  config.objective_tolerance = o.tol;
  config.max_iterations = o.max_iterations;
  config.step_mode = detail::parse_step(o.step);
  config.fixed_step = o.mu;
  config.apply_projection = !o.no_projection;
  config.validate();

  std::optional<Instance> synthetic;
  std::optional<SensingEnsemble> loaded;
  std::optional<SnapshotSet> loaded_y;
  if (!o.ensemble_path.empty() || !o.snapshots_path.empty()) {
    if (o.ensemble_path.empty() || o.snapshots_path.empty())
      throw ParameterError("--ensemble and --snapshots must be given together");
    loaded = io::ensemble_from_array(io::read_binary(o.ensemble_path));
    // Snapshot files hold one snapshot per row (p x m).
    loaded_y = SnapshotSet{io::read_matrix(o.snapshots_path).transpose()};
  } else {
    synthetic = draw_instance(o.n, o.m, o.p, o.rho, parse_distribution(o.distribution), g.seed);
  }
  const SensingEnsemble& ensemble = synthetic ? synthetic->ensemble : *loaded;
  const SnapshotSet& y = synthetic ? synthetic->y : *loaded_y;
  std::optional<GroundTruth> truth;
  if (synthetic) truth = synthetic->truth;

  const SolveResult r = solve(ensemble, y, config, truth);
  const auto dir = detail::output_dir(g);
  io::write_file((dir / "trace.csv").string(), io::format_trace_csv(r.trace));
  detail::write_vector(dir / "x_hat", r.x_hat, o.format);
  detail::write_vector(dir / "d_hat", r.d_hat, o.format);

  nlohmann::ordered_json j;
  j["n"] = ensemble.n();
  j["m"] = ensemble.m();
  j["p"] = ensemble.p();
  j["rho"] = o.rho;
  j["step"] = o.step;
  j["iterations"] = r.iterations;
  j["objective"] = r.objective;
  j["stop_reason"] = std::string(to_string(r.stop_reason));
  if (truth) j["error_db"] = to_db(max_relative_error(r.x_hat, r.d_hat, *truth));
  detail::write_json(dir / "summary.json", j);
  out << "solve: " << r.iterations << " iterations, f = " << io::format_double(r.objective) << ", "
      << to_string(r.stop_reason);
  if (truth) out << ", error " << io::format_double(j["error_db"].get<double>()) << " dB";
  out << "\n";
  return kExitOk;
}

struct GridOptions {
  PhaseGridSpec spec;
  bool full_scale = false;
  bool no_projection = false;
  std::string distribution = "gaussian";
};

inline int run_grid(GridOptions o, const GlobalOptions& g, std::ostream& out) {
  if (o.full_scale) {
    const auto full = PhaseGridSpec::full_scale();
    o.spec.n = full.n;
    o.spec.m = full.m;
    o.spec.p_values = full.p_values;
    o.spec.rho_values = full.rho_values;
  }
  o.spec.base_seed = g.seed;
  o.spec.apply_projection = !o.no_projection;
  o.spec.distribution = parse_distribution(o.distribution);
  const PhaseGridResult r = run_phase_transition(o.spec, g.workers);
  const auto dir = detail::output_dir(g);
  io::write_file((dir / "grid.csv").string(), io::format_grid_csv(r));
  io::write_file((dir / "trials.csv").string(), io::format_trials_csv(r));
  const MonotonicityReport mono = check_monotonicity(r);
  out << "phase-transition: " << r.records.size() << " trials, " << mono.inversions << "/" << mono.pairs
      << " adjacent inversions\n";
  return kExitOk;
}

struct DemoOptions {
  std::string input;
  DemoParams params;
  bool grayscale = false;
  bool no_projection = false;
};

inline int run_demo(DemoOptions o, const GlobalOptions& g, std::ostream& out) {
  Image img = read_image(o.input);
  if (o.grayscale) img = to_grayscale(img);
  o.params.seed = g.seed;
  o.params.apply_projection = !o.no_projection;
  const DemoReport r = run_imaging_demo(img, o.params);
  const auto dir = detail::output_dir(g);
  const std::string ext = img.channels() == 1 ? ".pgm" : ".ppm";
  write_image((dir / ("x_hat" + ext)).string(), r.x_hat);
  write_image((dir / ("x_ls" + ext)).string(), r.x_ls);
  write_image((dir / "d_hat.pgm").string(), gain_image(r.d_hat));
  write_image((dir / "d_true.pgm").string(), gain_image(r.d_true));
  detail::write_json(dir / "report.json", io::demo_report_json(r));
  out << "demo-image: error " << io::format_double(r.error_db) << " dB, least squares "
      << io::format_double(r.ls_error_db) << " dB, " << r.iterations << " iterations\n";
  return kExitOk;
}

struct RateOptions {
  RateInstanceSpec spec;
  bool no_projection = false;
};

inline int run_rate(RateOptions o, const GlobalOptions& g, std::ostream& out) {
  o.spec.seed = g.seed;
  o.spec.apply_projection = !o.no_projection;
  const RateComparison r = run_rate_comparison(o.spec);
  const auto dir = detail::output_dir(g);
  io::write_file((dir / "trace_line_search.csv").string(), io::format_trace_csv(r.line_search.trace));
  io::write_file((dir / "trace_fixed.csv").string(), io::format_trace_csv(r.fixed.trace));
  nlohmann::ordered_json j;
  j["line_search"] = {{"iterations", r.line_search.iterations},
                      {"stop_reason", std::string(to_string(r.line_search.stop_reason))},
                      {"error_db", r.line_search_error_db}};
  j["fixed"] = {{"iterations", r.fixed.iterations},
                {"stop_reason", std::string(to_string(r.fixed.stop_reason))},
                {"error_db", r.fixed_error_db},
                {"mu", o.spec.fixed_step}};
  detail::write_json(dir / "rate_summary.json", j);
  out << "rate-compare: line search " << r.line_search.iterations << " iterations, fixed " << r.fixed.iterations
      << " iterations\n";
  return kExitOk;
}

struct ConcentrationOptions {
  Index n = 32;
  Index m = 16;
  Index p = 100;
  std::string distribution = "gaussian";
  std::string theta = "ones";
  int trials = 20;
};

inline int run_concentration(const ConcentrationOptions& o, const GlobalOptions& g, std::ostream& out) {
  blindcal::detail::require_dimension(o.m >= 1, "m must be >= 1");
  Vector theta;
  if (o.theta == "ones") {
    theta = Vector::Ones(o.m);
  } else if (o.theta == "e1") {
    theta = Vector::Zero(o.m);
    theta[0] = 1.0;
  } else if (o.theta == "zero") {
    theta = Vector::Zero(o.m);
  } else {
    throw ParameterError("unknown theta '" + o.theta + "' (ones, e1, zero)");
  }
  const ConcentrationResult r =
      check_concentration(o.n, o.m, o.p, parse_distribution(o.distribution), theta, o.trials, g.seed);
  const auto dir = detail::output_dir(g);
  nlohmann::ordered_json j;
  j["n"] = o.n;
  j["m"] = o.m;
  j["p"] = o.p;
  j["theta"] = o.theta;
  j["trials"] = o.trials;
  j["max_deviation"] = r.max_deviation;
  j["mean_deviation"] = r.mean_deviation;
  j["per_trial"] = r.per_trial;
  detail::write_json(dir / "concentration.json", j);
  out << "check-concentration: max deviation " << io::format_double(r.max_deviation) << "\n";
  return kExitOk;
}

struct InitStudyOptions {
  Index n = 32;
  Index m = 16;
  std::vector<Index> p_values{16, 32, 64, 128, 256, 512, 1024, 2048};
  double rho = 0.1;
  int trials = 50;
};

inline int run_init_study_cmd(const InitStudyOptions& o, const GlobalOptions& g, std::ostream& out) {
  const InitStudyResult r = run_init_study(o.n, o.m, o.p_values, o.rho, o.trials, g.seed,
                                           Distribution::Gaussian, g.workers);
  const auto dir = detail::output_dir(g);
  std::string csv = "p,mp,mean_log_error\n";
  for (const auto& pt : r.points)
    csv += std::to_string(pt.p) + "," + io::format_double(pt.mp) + "," + io::format_double(pt.mean_log_error) + "\n";
  io::write_file((dir / "init_study.csv").string(), csv);
  nlohmann::ordered_json j;
  j["slope"] = r.slope;
  j["intercept"] = r.intercept;
  detail::write_json(dir / "init_study.json", j);
  out << "init-study: slope " << io::format_double(r.slope) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on usage or
/// configuration errors, 2 on runtime errors.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Blind calibration of sensor gains from randomised snapshots", "blindcal"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Base seed for all randomness");
  app.add_option("--output-dir", g.output_dir, "Output directory (default $BLINDCAL_OUTPUT_DIR or .)");
  app.add_option("--workers", g.workers, "Worker threads for independent trials")->check(CLI::PositiveNumber);

  SolveOptions so;
  auto* solve_cmd = app.add_subcommand("solve", "Solve one instance (synthetic or from files)");
  solve_cmd->add_option("--n", so.n, "Signal length")->check(CLI::PositiveNumber);
  solve_cmd->add_option("--m", so.m, "Number of sensors")->check(CLI::PositiveNumber);
  solve_cmd->add_option("--p", so.p, "Number of snapshots")->check(CLI::PositiveNumber);
  solve_cmd->add_option("--rho", so.rho, "Gain deviation bound");
  solve_cmd->add_option("--distribution", so.distribution, "gaussian or rademacher");
  solve_cmd->add_option("--tol", so.tol, "Objective tolerance");
  solve_cmd->add_option("--max-iterations", so.max_iterations, "Iteration cap");
  solve_cmd->add_option("--step", so.step, "line-search or fixed");
  solve_cmd->add_option("--mu", so.mu, "Fixed signal step");
  solve_cmd->add_flag("--no-projection", so.no_projection, "Skip the C_rho projection of the gains");
  solve_cmd->add_option("--ensemble", so.ensemble_path, "Binary p x m x n ensemble file");
  solve_cmd->add_option("--snapshots", so.snapshots_path, "Snapshot matrix file (p x m, CSV or binary)");
  solve_cmd->add_option("--format", so.format, "Output vector format: csv or bin")
      ->check(CLI::IsMember({"csv", "bin"}));

  GridOptions go;
  auto* grid_cmd = app.add_subcommand("phase-transition", "Empirical success probability over (p, rho)");
  grid_cmd->add_option("--n", go.spec.n)->check(CLI::PositiveNumber);
  grid_cmd->add_option("--m", go.spec.m)->check(CLI::PositiveNumber);
  grid_cmd->add_option("--p-values", go.spec.p_values, "Snapshot counts")->delimiter(',');
  grid_cmd->add_option("--rho-values", go.spec.rho_values, "Gain deviation bounds")->delimiter(',');
  grid_cmd->add_option("--trials", go.spec.trials_per_cell, "Trials per cell");
  grid_cmd->add_option("--zeta-db", go.spec.zeta_db, "Success threshold in dB");
  grid_cmd->add_option("--tol", go.spec.tolerance, "Objective tolerance");
  grid_cmd->add_option("--max-iterations", go.spec.max_iterations, "Iteration cap per trial");
  grid_cmd->add_option("--distribution", go.distribution, "gaussian or rademacher");
  grid_cmd->add_flag("--full-scale", go.full_scale, "Use n = 256, m = 64, p = 4..1024");
  grid_cmd->add_flag("--no-projection", go.no_projection);

  DemoOptions dopt;
  auto* demo_cmd = app.add_subcommand("demo-image", "Blind calibration of an image (PGM/PPM)");
  demo_cmd->add_option("--input", dopt.input, "Input P5/P6 image")->required();
  demo_cmd->add_option("--m", dopt.params.m, "Number of sensors")->check(CLI::PositiveNumber);
  demo_cmd->add_option("--p", dopt.params.p, "Snapshots (0: 2n/m)");
  demo_cmd->add_option("--rho", dopt.params.rho, "Gain deviation bound");
  demo_cmd->add_option("--tol", dopt.params.tolerance, "Objective tolerance");
  demo_cmd->add_option("--max-iterations", dopt.params.max_iterations, "Iteration cap");
  demo_cmd->add_flag("--grayscale", dopt.grayscale, "Average colour channels first");
  demo_cmd->add_flag("--no-projection", dopt.no_projection);

  RateOptions ro;
  auto* rate_cmd = app.add_subcommand("rate-compare", "Line search against fixed steps on one instance");
  rate_cmd->add_option("--n", ro.spec.n)->check(CLI::PositiveNumber);
  rate_cmd->add_option("--m", ro.spec.m)->check(CLI::PositiveNumber);
  rate_cmd->add_option("--p", ro.spec.p)->check(CLI::PositiveNumber);
  rate_cmd->add_option("--rho", ro.spec.rho);
  rate_cmd->add_option("--tol", ro.spec.tolerance);
  rate_cmd->add_option("--mu", ro.spec.fixed_step, "Fixed signal step");
  rate_cmd->add_option("--max-iterations", ro.spec.max_iterations);
  rate_cmd->add_flag("--no-projection", ro.no_projection);

  ConcentrationOptions co;
  auto* conc_cmd = app.add_subcommand("check-concentration", "Weighted covariance deviation of the ensemble");
  conc_cmd->add_option("--n", co.n)->check(CLI::PositiveNumber);
  conc_cmd->add_option("--m", co.m)->check(CLI::PositiveNumber);
  conc_cmd->add_option("--p", co.p)->check(CLI::PositiveNumber);
  conc_cmd->add_option("--distribution", co.distribution);
  conc_cmd->add_option("--theta", co.theta, "ones, e1 or zero");
  conc_cmd->add_option("--trials", co.trials);

  InitStudyOptions io_opts;
  auto* init_cmd = app.add_subcommand("init-study", "Initialisation distance against number of measurements");
  init_cmd->add_option("--n", io_opts.n)->check(CLI::PositiveNumber);
  init_cmd->add_option("--m", io_opts.m)->check(CLI::PositiveNumber);
  init_cmd->add_option("--p-values", io_opts.p_values)->delimiter(',');
  init_cmd->add_option("--rho", io_opts.rho);
  init_cmd->add_option("--trials", io_opts.trials);

  for (auto* sub : app.get_subcommands({}))
    sub->add_option("--config", g.config, "JSON file with option values (flags override)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    if (!g.config.empty()) detail::apply_config(*chosen, g.config);
    if (chosen == solve_cmd) return run_solve(so, g, out);
    if (chosen == grid_cmd) return run_grid(go, g, out);
    if (chosen == demo_cmd) return run_demo(dopt, g, out);
    if (chosen == rate_cmd) return run_rate(ro, g, out);
    if (chosen == conc_cmd) return run_concentration(co, g, out);
    if (chosen == init_cmd) return run_init_study_cmd(io_opts, g, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"blindcal"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace blindcal::cli
