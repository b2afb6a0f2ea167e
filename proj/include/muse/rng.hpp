#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace muse {

inline uint64_t splitmix64(uint64_t &state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Deterministic, platform-independent generator. std::mt19937 would also be
// reproducible on one toolchain, but the distribution adapters are not
// specified bit-exactly; everything here is, which keeps checkpoints and
// synthetic datasets byte-stable.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {
    // decorrelate trivially related seeds
    state_ = splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // multiply-shift; bias is negligible for n << 2^64
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double exponential(double mean) {
    double u = uniform01();
    while (u <= 1e-300) u = uniform01();
    return -mean * std::log(u);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  // child stream independent of subsequent draws from this one
  Rng fork(uint64_t tag) const { return Rng(mix64(state_, tag)); }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace muse
