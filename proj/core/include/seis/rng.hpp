#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace seis {

/// splitmix64 finalizer; used to derive independent stream seeds from a
/// master seed plus stream identifiers (line id, epoch, step, ...).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0x9e3779b97f4a7c15ull,
                       std::uint64_t c = 0);

/// Deterministic random source. Distribution transforms are implemented here
/// instead of via std::*_distribution, whose output is implementation
/// defined; this keeps generated datasets reproducible across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1): 53 mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  /// Inclusive integer range.
  long long range(long long lo, long long hi) {
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Random sign, +1.0 or -1.0.
  double sign() { return (engine_() & 1) ? 1.0 : -1.0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices drawn uniformly from [0, n), order significant.
  std::vector<std::size_t> distinct(std::size_t n, std::size_t k);

private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace seis
