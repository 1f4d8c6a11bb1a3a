#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "holomux/core.hpp"

namespace holomux {

// Distribution algorithms in <random> are implementation-defined, so event
// streams would differ between standard libraries. The engine (mt19937_64) is
// fully specified; every distribution below is written out explicitly.

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based seed for one (master seed, shot, stream) triple.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t shot_id, std::uint64_t stream = 0) {
  return mix64(mix64(master ^ mix64(stream)) + shot_id);
}

namespace stream {
constexpr std::uint64_t simulate = 0;
constexpr std::uint64_t render = 1;
constexpr std::uint64_t harness = 2;
constexpr std::uint64_t sweep = 3;
}  // namespace stream

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform in (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  bool bernoulli(double p) { return p >= 1.0 || (p > 0.0 && uniform() < p); }

  /// Marsaglia polar method; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Geometric law P(n) = (1-q) q^n by inversion.
  std::uint64_t geometric(double q) {
    if (q <= 0.0) return 0;
    return static_cast<std::uint64_t>(std::floor(std::log(uniform_open0()) / std::log(q)));
  }

  /// Poisson variate: multiplication method below mean 10, PTRS (Hoermann 1993) above.
  std::uint64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 10.0) {
      const double limit = std::exp(-mean);
      std::uint64_t k = 0;
      double prod = uniform_open0();
      while (prod > limit) {
        ++k;
        prod *= uniform_open0();
      }
      return k;
    }
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
          -mean + k * loglam - std::lgamma(k + 1.0)) {
        return static_cast<std::uint64_t>(k);
      }
    }
  }

  /// Exponential with the given rate, truncated to [0, limit).
  double truncated_exponential(double rate, double limit) {
    if (rate <= 0.0) return uniform() * limit;
    const double tail = -std::expm1(-rate * limit);
    return -std::log1p(-uniform() * tail) / rate;
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Walker/Vose alias table over the integers [offset, offset + n).
/// One 64-bit draw per sample: the top bits choose the column, the low 53 bits
/// decide between the column and its alias.
class AliasTable {
public:
  AliasTable() = default;
  AliasTable(const std::vector<double>& weights, int offset) : offset_(offset) {
    detail::require(!weights.empty(), "alias table needs weights");
    std::size_t n = 1;
    shift_ = 64;
    while (n < weights.size()) {
      n <<= 1;
      --shift_;
    }
    // Column index and acceptance fraction must come from disjoint bits.
    detail::require(n <= (1u << 11), "alias table too large");
    double total = 0.0;
    for (double w : weights) total += w;
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) scaled[i] = weights[i] / total * static_cast<double>(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) (scaled[i] < 1.0 ? small : large).push_back(i);
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = static_cast<std::uint32_t>(l);
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
  }

  /// Variant for 32 random bits; the acceptance fraction gets the bits left after the column.
  int sample32(std::uint32_t r) const {
    const int col_bits = 64 - shift_;
    const std::size_t column = col_bits == 0 ? 0 : static_cast<std::size_t>(r >> (32 - col_bits));
    const int frac_bits = 32 - col_bits;
    const double u = static_cast<double>(r & ((1u << frac_bits) - 1u)) * std::ldexp(1.0, -frac_bits);
    const std::size_t pick = u < prob_[column] ? column : alias_[column];
    return static_cast<int>(pick) + offset_;
  }

  int sample(std::uint64_t r) const {
    const std::size_t column = shift_ == 64 ? 0 : static_cast<std::size_t>(r >> shift_);
    const double u = static_cast<double>(r & ((1ull << 53) - 1)) * 0x1.0p-53;
    const std::size_t pick = u < prob_[column] ? column : alias_[column];
    return static_cast<int>(pick) + offset_;
  }

private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
  int offset_ = 0;
  int shift_ = 64;
};

/// Law of round(N(0, sigma^2)), truncated at +-9 sigma.
inline AliasTable rounded_gaussian_table(double sigma) {
  if (sigma <= 0.0) return AliasTable({1.0}, 0);
  const int half = static_cast<int>(std::ceil(9.0 * sigma));
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(2 * half + 1));
  auto cdf = [&](double x) { return 0.5 * std::erfc(-x / (sigma * std::numbers::sqrt2)); };
  for (int j = -half; j <= half; ++j) {
    // Tail masses from the upper side keep precision for large |j|.
    const double p = j >= 0 ? (0.5 * std::erfc((j - 0.5) / (sigma * std::numbers::sqrt2)) -
                               0.5 * std::erfc((j + 0.5) / (sigma * std::numbers::sqrt2)))
                            : (cdf(j + 0.5) - cdf(j - 0.5));
    w.push_back(p);
  }
  return AliasTable(w, -half);
}

}  // namespace holomux
