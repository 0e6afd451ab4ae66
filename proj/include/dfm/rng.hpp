#pragma once
// Counter-based RNG (Philox4x32-10) with named substreams.
//
// A stream is identified by a key derived from the seed and a path of tags;
// draws inside one stream never depend on how much any other stream has
// consumed. This is what makes simulation of distinct consumers, per-iteration
// Monte Carlo draws, and replication grids order-independent and replayable.
//
// Stream paths used across the project (documented at the call sites):
//   simulate:   stream("theta") / ("gamma") / ("lambda") / ("rho") / ("prices")
//               stream("init_lag").stream(consumer), stream("choices").stream(consumer)
//   fit:        stream("init"), stream("mc").stream(iteration),
//               stream("batch").stream(iteration), stream("draws").stream(s)
//   experiment: stream("replication").stream(setting).stream(rep)

#include <cstdint>
#include <cmath>
#include <limits>
#include <string_view>

namespace dfm {

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(detail::splitmix64(seed)) {}

  // Derive an independent substream. The parent is not advanced.
  [[nodiscard]] Rng stream(std::uint64_t tag) const {
    Rng r(*this);
    r.key_ = detail::splitmix64(key_ ^ detail::splitmix64(tag));
    r.counter_ = 0;
    r.buf_pos_ = 2;
    r.has_cached_normal_ = false;
    return r;
  }

  [[nodiscard]] Rng stream(std::string_view name) const { return stream(fnv1a64(name)); }

  std::uint64_t next_u64() {
    if (buf_pos_ >= 2) {
      refill();
      buf_pos_ = 0;
    }
    return buf_[buf_pos_++];
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer on {0, ..., n-1}.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t bound = n == 0 ? 0 : (0 - n) % n;  // (2^64 - n) mod n
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x >= bound) return x % n;
    }
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
  }

  // Gumbel(0,1) via inverse CDF, u clamped away from {0,1}.
  double gumbel() {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    double u = uniform();
    if (u < eps) u = eps;
    if (u > 1.0 - eps) u = 1.0 - eps;
    return -std::log(-std::log(u));
  }

 private:
  void refill() {
    // Philox4x32-10 block: counter (counter_, 0) under key key_.
    std::uint32_t c0 = static_cast<std::uint32_t>(counter_);
    std::uint32_t c1 = static_cast<std::uint32_t>(counter_ >> 32);
    std::uint32_t c2 = 0, c3 = 0;
    std::uint32_t k0 = static_cast<std::uint32_t>(key_);
    std::uint32_t k1 = static_cast<std::uint32_t>(key_ >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = 0xD2511F53ull * c0;
      const std::uint64_t p1 = 0xCD9E8D57ull * c2;
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      const std::uint32_t n0 = hi1 ^ c1 ^ k0;
      const std::uint32_t n1 = lo1;
      const std::uint32_t n2 = hi0 ^ c3 ^ k1;
      const std::uint32_t n3 = lo0;
      c0 = n0; c1 = n1; c2 = n2; c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    buf_[0] = (static_cast<std::uint64_t>(c1) << 32) | c0;
    buf_[1] = (static_cast<std::uint64_t>(c3) << 32) | c2;
    ++counter_;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t buf_[2] = {0, 0};
  int buf_pos_ = 2;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace dfm
