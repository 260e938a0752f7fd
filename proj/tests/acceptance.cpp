// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "blindcal/baseline.hpp"
#include "blindcal/experiments.hpp"
#include "blindcal/image.hpp"
#include "blindcal/io.hpp"
#include "oracles.hpp"

using namespace blindcal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

Vector random_vector(Rng& rng, Index k, double scale = 1.0) {
  Vector v(k);
  for (Index i = 0; i < k; ++i) v[i] = scale * rng.normal();
  return v;
}

// 1. Gradients against central differences, Hessian-vector products against
//    second-order differences of the objective.
Outcome gradient_correctness() {
  Rng rng(101);
  double worst_grad = 0.0, worst_hv = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Index n = 2 + static_cast<Index>(rng.uniform() * 29);  // 2..30
    const Index m = 2 + static_cast<Index>(rng.uniform() * 19);  // 2..20
    const Index p = 1 + static_cast<Index>(rng.uniform() * 6);
    const double rho = 0.05 + 0.9 * rng.uniform();
    const Instance inst = draw_instance(n, m, p, rho, Distribution::Gaussian, derive_seed(1, {{"instance", static_cast<std::uint64_t>(t)}}));
    const auto a = oracle::matrices(inst.ensemble);
    const Vector xi = inst.truth.x + random_vector(rng, n, 0.5);
    const Vector gamma = (random_vector(rng, m, 0.5).array() + 1.0).matrix();
    const GradientPair g = gradients(inst.ensemble, inst.y, {xi, gamma});
    const Vector fd = oracle::fd_gradient(a, inst.y.values, xi, gamma, 1e-5);
    worst_grad = std::max({worst_grad, oracle::rel(g.grad_xi, fd.head(n)), oracle::rel(g.grad_gamma, fd.tail(m))});
    const Matrix h = hessian(inst.ensemble, inst.y, {xi, gamma});
    const Vector v = random_vector(rng, n + m);
    const Vector hv_fd = oracle::fd_hessian_vector(a, inst.y.values, xi, gamma, v, 1e-3);
    worst_hv = std::max(worst_hv, oracle::rel(h * v, hv_fd));
  }
  return {worst_grad <= 1e-4 && worst_hv <= 1e-3,
          "worst gradient rel err " + fmt(worst_grad) + " (<= 1e-4), worst Hv rel err " + fmt(worst_hv) + " (<= 1e-3)"};
}

// 2. Projection onto C_rho against the 3^m pattern enumeration.
Outcome projection_oracle() {
  Rng rng(202);
  const double rhos[] = {0.1, 0.3, 0.9};
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const Index m = 1 + t % 6;
    const double rho = rhos[t % 3];
    const Vector g = (random_vector(rng, m, 0.3 + rng.uniform()).array() + 1.0).matrix();
    worst = std::max(worst, (project_C_rho(g, rho) - oracle::project_c_rho_bruteforce(g, rho)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-8, "worst coordinate deviation " + fmt(worst) + " (<= 1e-8) over 500 inputs"};
}

// 3. Monte-Carlo means of f and both gradients against the expectation column.
Outcome expectation_consistency() {
  const Index n = 16, m = 8, p = 4;
  Rng rng(303);
  const GroundTruth truth = make_ground_truth(draw_unit_ball(n, rng), draw_gain_perturbation(m, 0.3, 7), 0.3);
  const EvaluationPoint pt{truth.x + random_vector(rng, n, 0.2),
                           project_C_rho((random_vector(rng, m, 0.3).array() + 1.0).matrix(), 0.3)};
  double f_mean = 0.0;
  Vector gx = Vector::Zero(n), gg = Vector::Zero(m);
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const auto e = SensingEnsemble::generate(n, m, p, Distribution::Gaussian, derive_seed(3, {{"ensemble", static_cast<std::uint64_t>(t)}}));
    const SnapshotSet y = sense(e, truth.x, truth.d);
    f_mean += objective_value(e, y, pt);
    const GradientPair g = gradients(e, y, pt);
    gx += g.grad_xi;
    gg += g.grad_gamma;
  }
  f_mean /= trials;
  gx /= trials;
  gg /= trials;
  const GradientPair eg = expected_gradients(pt, truth);
  const double ef = expected_objective(pt, truth);
  const double rf = std::abs(f_mean - ef) / ef;
  const double rx = oracle::rel(gx, eg.grad_xi);
  const double rg = oracle::rel(gg, eg.grad_gamma);
  return {rf <= 0.1 && rx <= 0.1 && rg <= 0.1,
          "rel err f " + fmt(rf) + ", grad_xi " + fmt(rx) + ", grad_gamma " + fmt(rg) + " (each <= 0.1)"};
}

// 4. (1 - rho) Delta <= Delta_F <= (1 + 2 rho) Delta with gamma in C_rho.
Outcome sandwich_bound() {
  Rng rng(404);
  int violations = 0;
  double worst_low = 1e300, worst_high = 1e300;
  for (double rho : {0.1, 0.5, 0.9}) {
    for (int t = 0; t < 1000; ++t) {
      const Index n = 2 + t % 15;
      const Index m = 2 + (t / 15) % 10;
      const GroundTruth truth = make_ground_truth(
          random_vector(rng, n), draw_gain_perturbation(m, rho, derive_seed(4, {{"t", static_cast<std::uint64_t>(t)}})),
          rho);
      const Vector gamma = project_C_rho((random_vector(rng, m, 2.0 * rho).array() + 1.0).matrix(), rho);
      const double spread = std::pow(10.0, 2.0 * rng.uniform_symmetric());
      const Vector xi = truth.x + random_vector(rng, n, spread);
      const double d = delta({xi, gamma}, truth);
      const double df = delta_F({xi, gamma}, truth);
      const double low = df - (1.0 - rho) * d;
      const double high = (1.0 + 2.0 * rho) * d - df;
      worst_low = std::min(worst_low, low);
      worst_high = std::min(worst_high, high);
      if (low < -1e-9 || high < -1e-9) ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in 3000 points; min lower slack " +
                               fmt(worst_low) + ", min upper slack " + fmt(worst_high)};
}

// 5. Exact recovery at desk scale.
Outcome exact_recovery() {
  PhaseGridSpec spec;
  spec.max_iterations = 100000;
  int successes = 0;
  double worst = -1e300, best = 1e300;
  for (int t = 0; t < 20; ++t) {
    const TrialRecord r = run_phase_trial(spec, 128, 1e-3, trial_seed(5, 0, t));
    successes += r.success;
    worst = std::max(worst, r.error_db);
    best = std::min(best, r.error_db);
  }
  return {successes >= 19, std::to_string(successes) + "/20 trials below -70 dB (need >= 19); error range [" +
                               fmt(best) + ", " + fmt(worst) + "] dB"};
}

// 6. Phase-transition shape on the scaled grid.
Outcome phase_transition_shape() {
  PhaseGridSpec spec;  // n = 64, m = 16, p = 4..256, 8 rho values, 10 trials
  const PhaseGridResult r = run_phase_transition(spec, std::max(1u, std::thread::hardware_concurrency()));
  const MonotonicityReport rep = check_monotonicity(r);
  const double frac = static_cast<double>(rep.inversions) / rep.pairs;
  std::ostringstream table;
  for (Index i = 0; i < r.success_probability.rows(); ++i) {
    table << "\n      p=" << r.p_values[static_cast<std::size_t>(i)] << ":";
    for (Index j = 0; j < r.success_probability.cols(); ++j) table << " " << fmt(r.success_probability(i, j), 2);
  }
  return {frac <= 0.1 && rep.worst_inversion <= 0.1 + 1e-12,
          std::to_string(rep.inversions) + "/" + std::to_string(rep.pairs) + " adjacent inversions (" + fmt(frac) +
              ", <= 0.1), worst " + fmt(rep.worst_inversion) + " (<= 0.1)" + table.str()};
}

// 7. Imaging demo on a 32 x 32 grey image.
Outcome imaging_demo() {
  const Image img = read_image(std::string(BLINDCAL_DATA_DIR) + "/camera32.pgm");
  DemoParams params;
  params.m = 64;
  params.p = 32;
  params.rho = 0.99;
  params.tolerance = 1e-6;
  params.seed = 7;
  const DemoReport r = run_imaging_demo(img, params);
  return {r.error_db < -55.0 && r.ls_error_db > -15.0,
          "blind calibration " + fmt(r.error_db) + " dB (< -55), least squares " + fmt(r.ls_error_db) +
              " dB (> -15), " + std::to_string(r.iterations) + " iterations"};
}

// 8. Line search against fixed steps.
Outcome rate_comparison() {
  RateInstanceSpec spec;  // n = 64, m = 16, p = 64, rho = 0.3, mu = 1e-4
  const RateComparison r = run_rate_comparison(spec);
  auto monotone = [](const SolverTrace& t, double& worst) {
    bool ok = true;
    for (std::size_t k = 2; k < t.records.size(); ++k) {
      const double prev = *t.records[k - 1].delta;
      const double cur = *t.records[k].delta;
      worst = std::max(worst, (cur - prev) / prev);
      if (cur > prev * (1.0 + 1e-12)) ok = false;
    }
    return ok;
  };
  double w_ls = -1e300, w_fx = -1e300;
  const bool mono_ls = monotone(r.line_search.trace, w_ls);
  const bool mono_fx = monotone(r.fixed.trace, w_fx);
  const bool both_reach = r.line_search.stop_reason == StopReason::Converged &&
                          r.fixed.stop_reason == StopReason::Converged;
  return {both_reach && r.line_search.iterations < r.fixed.iterations && mono_ls && mono_fx,
          "iterations line search " + std::to_string(r.line_search.iterations) + " vs fixed " +
              std::to_string(r.fixed.iterations) + "; both reach tol: " + (both_reach ? "yes" : "no") +
              "; Delta non-increasing: line search " + (mono_ls ? "yes" : "no") + " (max rel rise " + fmt(w_ls) +
              "), fixed " + (mono_fx ? "yes" : "no") + " (max rel rise " + fmt(w_fx) + ")"};
}

// 9. Initialisation distance slope against log(mp).
Outcome initialisation_proximity() {
  const std::vector<Index> ps{16, 32, 64, 128, 256, 512, 1024, 2048};  // mp = 256 .. 32768
  const InitStudyResult r = run_init_study(32, 16, ps, 0.1, 50, 9);
  return {r.slope >= -0.65 && r.slope <= -0.35, "slope " + fmt(r.slope) + " over mp in [256, 32768] (in [-0.65, -0.35])"};
}

// 10. Concentration deviation shrinks by about 2 when p grows 4x.
Outcome concentration_trend() {
  const Vector theta = Vector::Ones(16);
  const auto a = check_concentration(32, 16, 100, Distribution::Gaussian, theta, 20, 10);
  const auto b = check_concentration(32, 16, 400, Distribution::Gaussian, theta, 20, 10);
  const double ratio = b.max_deviation / a.max_deviation;
  return {ratio >= 0.4 && ratio <= 0.6, "deviation " + fmt(a.max_deviation) + " at p=100, " + fmt(b.max_deviation) +
                                            " at p=400, ratio " + fmt(ratio) + " (in [0.4, 0.6])"};
}

// 11. Byte-identical CLI outputs for identical seeds.
std::string normalise(const fs::path& file) {
  std::string text = io::read_file(file.string());
  if (file.extension() != ".csv") return text;
  // Trace CSVs carry wall time in the last column.
  std::istringstream in(text);
  std::string first;
  std::getline(in, first);
  if (first.find("elapsed_seconds") == std::string::npos) return text;
  std::string out = first + "\n";
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "blindcal_acceptance_cli";
  fs::remove_all(root);
  const std::string cli = BLINDCAL_CLI_PATH;
  const std::string image = std::string(BLINDCAL_DATA_DIR) + "/astronaut32.ppm";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"solve", "solve --n 32 --m 8 --p 32 --rho 0.2"},
      {"phase-transition", "phase-transition --n 16 --m 8 --p-values 4,16 --rho-values 0.1,0.5 --trials 2"},
      {"demo-image", "demo-image --input " + image + " --m 64 --p 32 --rho 0.99"},
      {"rate-compare", "rate-compare --n 16 --m 8 --p 32 --rho 0.1 --mu 1e-2"},
      {"check-concentration", "check-concentration --n 16 --m 8 --p 20 --trials 3"},
      {"init-study", "init-study --n 8 --m 4 --p-values 4,16,64 --trials 5"},
  };
  int identical = 0, compared = 0;
  std::string problems;
  for (const auto& [name, args] : commands) {
    std::vector<fs::path> dirs{root / (name + "_a"), root / (name + "_b")};
    bool ran = true;
    for (const auto& d : dirs) {
      const std::string cmd = cli + " " + args + " --seed 11 --output-dir " + d.string() + " > /dev/null";
      if (std::system(cmd.c_str()) != 0) ran = false;
    }
    if (!ran) {
      problems += " " + name + ":failed";
      continue;
    }
    bool same = true;
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      ++files;
      const fs::path other = dirs[1] / entry.path().filename();
      if (!fs::exists(other) || normalise(entry.path()) != normalise(other)) {
        same = false;
        problems += " " + name + ":" + entry.path().filename().string();
      }
    }
    ++compared;
    if (same && files > 0) ++identical;
  }
  return {identical == static_cast<int>(commands.size()),
          std::to_string(identical) + "/" + std::to_string(commands.size()) +
              " subcommands byte-identical (wall time excluded)" + (problems.empty() ? "" : ";" + problems)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient and Hessian correctness", gradient_correctness},
      {"projection oracle equivalence", projection_oracle},
      {"expectation consistency", expectation_consistency},
      {"sandwich bound", sandwich_bound},
      {"exact recovery at desk scale", exact_recovery},
      {"phase-transition shape", phase_transition_shape},
      {"imaging demo", imaging_demo},
      {"rate comparison", rate_comparison},
      {"initialisation proximity", initialisation_proximity},
      {"concentration trend", concentration_trend},
      {"determinism", cli_determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "criterion " << (k + 1) << " (" << criteria[k].first
              << "): " << o.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
