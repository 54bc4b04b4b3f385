#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace iman {

// Counter-based generator: every output is a pure integer function of
// (key, counter), so streams are reproducible across platforms and can be
// split into independent named children without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0xD1B54A32D192ED03ull)) {}

  // Independent child stream derived from a purpose name ("data", "init", ...).
  Rng split(std::string_view name) const {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return Rng(key_, mix64(key_ ^ h));
  }

  Rng split(std::uint64_t index) const {
    return Rng(key_, mix64(key_ + 0x9E3779B97F4A7C15ull * (index + 1)));
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + 0x9E3779B97F4A7C15ull * counter_);
  }

  // First output of this stream without advancing it; used to hand a derived
  // stream to an API that takes a plain integer seed.
  std::uint64_t derive() const {
    Rng copy = *this;
    return copy.next_u64();
  }

  // Unbiased integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform in (0, 1]; never zero so it is safe under log().
  double next_uniform() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return static_cast<double>(bits + 1) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Normal clipped to |z| <= 2 by resampling, then scaled.
  double next_trunc_normal(double scale) {
    double z = next_normal();
    while (std::fabs(z) > 2.0) z = next_normal();
    return z * scale;
  }

  std::vector<double> normal_vector(std::size_t n, double scale = 1.0) {
    std::vector<double> out(n);
    for (auto& v : out) v = next_normal() * scale;
    return out;
  }

  std::vector<double> trunc_normal_vector(std::size_t n, double scale) {
    std::vector<double> out(n);
    for (auto& v : out) v = next_trunc_normal(scale);
    return out;
  }

  // Fisher-Yates; integer-only, so the permutation is platform independent.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), uniform without replacement (integer-only).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  Rng(std::uint64_t, std::uint64_t key) : key_(key) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

inline std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k && i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k < n ? k : n);
  return idx;
}

}  // namespace iman
