#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace blindcal {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

using SeedLabel = std::pair<std::string_view, std::uint64_t>;

/// Stable hash chain over labelled indices. Each link folds the label hash
/// and the index into the running state, so label order matters and the
/// result only depends on integer arithmetic (identical on every platform).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<SeedLabel> labels) noexcept {
  std::uint64_t h = detail::splitmix64(base);
  for (const auto& [label, index] : labels) {
    h = detail::splitmix64(h ^ detail::fnv1a(label));
    h = detail::splitmix64(h ^ index);
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::vector<SeedLabel>& labels) noexcept {
  std::uint64_t h = detail::splitmix64(base);
  for (const auto& [label, index] : labels) {
    h = detail::splitmix64(h ^ detail::fnv1a(label));
    h = detail::splitmix64(h ^ index);
  }
  return h;
}

/// Seeded generator with distribution code that does not depend on the
/// standard library implementation (std::normal_distribution does).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on [-1, 1).
  double uniform_symmetric() { return 2.0 * uniform() - 1.0; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace blindcal
