// Deterministic counter-based random streams. Every consumer derives its own
// stream from (root seed, stream name, index), so records, bias draws and
// parameter inits are reproducible independently of evaluation order or
// thread count.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ritw {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// A fresh root seed for a named sub-run (sweep cell, repeat index), so
// stages can be rerun independently yet reproducibly.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t index = 0) {
  std::uint64_t s = root;
  s = splitmix64(s) ^ fnv1a(name);
  s = splitmix64(s) ^ index;
  return splitmix64(s);
}

class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
    state_ = seed;
    state_ = splitmix64(state_) ^ fnv1a(stream);
    state_ = splitmix64(state_) ^ index;
    (void)splitmix64(state_);  // decorrelate nearby indices
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Modulo bias is negligible for the small n used here, but reject anyway.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; the spare keeps consumption even.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ritw
