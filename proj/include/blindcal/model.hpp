#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "blindcal/errors.hpp"
#include "blindcal/random.hpp"

namespace blindcal {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Signal x, iterate xi or estimate x_hat (length n).
using SignalVector = Eigen::VectorXd;
/// Gains d, iterate gamma or estimate d_hat (length m).
using GainVector = Eigen::VectorXd;

enum class Distribution { Gaussian, Rademacher };

inline std::string_view to_string(Distribution d) {
  return d == Distribution::Gaussian ? "gaussian" : "rademacher";
}

inline Distribution parse_distribution(std::string_view s) {
  if (s == "gaussian") return Distribution::Gaussian;
  if (s == "rademacher") return Distribution::Rademacher;
  throw ParameterError("unknown distribution '" + std::string(s) + "'");
}

/// p random m x n sensing matrices A_l with i.i.d. isotropic rows.
///
/// Snapshot l is drawn from its own generator seeded with
/// derive_seed(seed, {("snapshot", l)}), so any single A_l can be rebuilt
/// without the others. In Lazy mode nothing is stored and every access
/// regenerates the matrix.
class SensingEnsemble {
 public:
  enum class Storage { Materialized, Lazy };

  static SensingEnsemble generate(Index n, Index m, Index p, Distribution distribution, std::uint64_t seed,
                                  Storage storage = Storage::Materialized) {
    detail::require_dimension(n >= 1 && m >= 1 && p >= 1, "ensemble dimensions n, m, p must be >= 1");
    SensingEnsemble e;
    e.n_ = n;
    e.m_ = m;
    e.p_ = p;
    e.distribution_ = distribution;
    e.seed_ = seed;
    e.storage_ = storage;
    if (storage == Storage::Materialized) {
      e.matrices_.reserve(static_cast<std::size_t>(p));
      for (Index l = 0; l < p; ++l) e.matrices_.push_back(generate_snapshot(n, m, distribution, seed, l));
    }
    return e;
  }

  /// Wraps explicitly given matrices (files, hand-built fixtures).
  static SensingEnsemble from_matrices(std::vector<Matrix> matrices) {
    detail::require_dimension(!matrices.empty(), "ensemble needs at least one matrix");
    const Index m = matrices.front().rows();
    const Index n = matrices.front().cols();
    detail::require_dimension(m >= 1 && n >= 1, "ensemble matrices must be non-empty");
    for (const auto& a : matrices)
      detail::require_dimension(a.rows() == m && a.cols() == n, "ensemble matrices must share one shape");
    SensingEnsemble e;
    e.n_ = n;
    e.m_ = m;
    e.p_ = static_cast<Index>(matrices.size());
    e.matrices_ = std::move(matrices);
    return e;
  }

  static Matrix generate_snapshot(Index n, Index m, Distribution distribution, std::uint64_t seed, Index l) {
    Rng rng(derive_seed(seed, {{"snapshot", static_cast<std::uint64_t>(l)}}));
    Matrix a(m, n);
    // Row-major fill so row a_{i,l} is a contiguous run of draws.
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j)
        a(i, j) = distribution == Distribution::Gaussian ? rng.normal() : rng.rademacher();
    return a;
  }

  Index n() const noexcept { return n_; }
  Index m() const noexcept { return m_; }
  Index p() const noexcept { return p_; }
  Distribution distribution() const noexcept { return distribution_; }
  std::uint64_t seed() const noexcept { return seed_; }
  Storage storage() const noexcept { return storage_; }

  /// Calls fn(const Matrix& A_l).
  template <typename Fn>
  decltype(auto) with_snapshot(Index l, Fn&& fn) const {
    if (storage_ == Storage::Lazy) {
      const Matrix a = generate_snapshot(n_, m_, distribution_, seed_, l);
      return fn(a);
    }
    return fn(matrices_[static_cast<std::size_t>(l)]);
  }

  Matrix snapshot(Index l) const {
    return with_snapshot(l, [](const Matrix& a) { return Matrix(a); });
  }

 private:
  SensingEnsemble() = default;

  Index n_ = 0;
  Index m_ = 0;
  Index p_ = 0;
  Distribution distribution_ = Distribution::Gaussian;
  std::uint64_t seed_ = 0;
  Storage storage_ = Storage::Materialized;
  std::vector<Matrix> matrices_;
};

/// p measurement vectors; column l holds y_l.
struct SnapshotSet {
  Matrix values;

  Index m() const noexcept { return values.rows(); }
  Index p() const noexcept { return values.cols(); }
  auto snapshot(Index l) const { return values.col(l); }
};

/// The representative (x*, d*) of the scaling orbit with d* on the scaled
/// simplex, plus the deviation bound rho >= ||d* - 1||_inf.
struct GroundTruth {
  SignalVector x;
  GainVector d;
  double rho = 0.0;
};

/// Rescales (x, d) to (||d||_1/m x, m/||d||_1 d) and checks the bound rho.
inline GroundTruth make_ground_truth(const SignalVector& x, const GainVector& d, double rho) {
  detail::require_parameter(rho >= 0.0 && rho < 1.0, "rho must lie in [0, 1)");
  detail::require_dimension(x.size() >= 1 && d.size() >= 1, "ground truth needs non-empty x and d");
  detail::require_parameter(x.allFinite() && d.allFinite(), "ground truth must be finite");
  detail::require_parameter((d.array() > 0.0).all(), "gains must be strictly positive");
  const double m = static_cast<double>(d.size());
  const double l1 = d.sum();
  GroundTruth t{(l1 / m) * x, (m / l1) * d, rho};
  const double deviation = (t.d.array() - 1.0).abs().maxCoeff();
  detail::require_parameter(deviation <= rho + 1e-9, "gain deviation exceeds rho");
  return t;
}

/// y_l = diag(d) A_l x for every snapshot.
inline SnapshotSet sense(const SensingEnsemble& ensemble, const SignalVector& x, const GainVector& d) {
  detail::require_dimension(x.size() == ensemble.n(), "signal length does not match ensemble n");
  detail::require_dimension(d.size() == ensemble.m(), "gain length does not match ensemble m");
  SnapshotSet y{Matrix(ensemble.m(), ensemble.p())};
  for (Index l = 0; l < ensemble.p(); ++l)
    ensemble.with_snapshot(l, [&](const Matrix& a) { y.values.col(l) = d.cwiseProduct(a * x); });
  return y;
}

inline void check_consistent(const SensingEnsemble& ensemble, const SnapshotSet& y) {
  detail::require_dimension(y.m() == ensemble.m() && y.p() == ensemble.p(),
                            "snapshot set shape does not match ensemble");
}

}  // namespace blindcal
