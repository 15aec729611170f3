/**
 * @file random.hpp
 * @brief Counter-based random streams with platform-independent sampling.
 *
 * Output i of a stream keyed by `key` is splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15),
 * i.e. SplitMix64 driven by an explicit counter. Streams for independent consumers are
 * derived with `derive_key(seed, stream)`, so draws never depend on thread scheduling.
 * Normals use Box-Muller and simplex points use normalized exponentials, both written
 * out here because the standard distributions are implementation-defined.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace robust_ode {

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  [[nodiscard]] std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64(key_ + counter_ * kGamma);
  }

  /** Uniform on the open interval (0, 1). */
  [[nodiscard]] double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  [[nodiscard]] double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  [[nodiscard]] double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  /** Uniform draw from the probability simplex of the given dimension (Dirichlet(1,...,1)). */
  [[nodiscard]] std::vector<double> simplex(std::size_t dim) noexcept {
    std::vector<double> w(dim);
    double total = 0.0;
    for (auto& v : w) {
      v = -std::log(uniform());
      total += v;
    }
    for (auto& v : w) {
      v /= total;
    }
    return w;
  }

  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace robust_ode
