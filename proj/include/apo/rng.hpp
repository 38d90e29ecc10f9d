#pragma once

#include <cmath>
#include <cstdint>

namespace apo {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter). Replaying a request sequence in another process
// reproduces the exact byte stream as long as the ordinals match.
// Mixing is splitmix64 applied to the combined state.
class DetRng {
 public:
  explicit DetRng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  static uint64_t mix(uint64_t seed, uint64_t stream, uint64_t counter) {
    uint64_t z = seed;
    z += 0x9e3779b97f4a7c15ULL * (stream + 1);
    z += 0xbf58476d1ce4e5b9ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return mix(seed_, stream_, counter_++); }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Lemire reduction; deterministic on this target.
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; consumes two draws per call, no cached spare.
  double gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

  // Independent child stream, e.g. one per request ordinal.
  DetRng fork(uint64_t substream) const {
    return DetRng(mix(seed_, stream_, 0xabcd0000ULL + substream), 0);
  }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
};

}  // namespace apo
