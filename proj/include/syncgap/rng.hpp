#ifndef SYNCGAP_RNG_HPP
#define SYNCGAP_RNG_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace syncgap {

// Counter-based splittable PRNG. Every draw is a pure hash of (key, counter),
// and substreams are derived by rekeying, so work fanned out over
// (seed, task, step, ...) cells is order-independent: adding seeds or threads
// never perturbs existing streams.
class SplitRng {
 public:
  explicit SplitRng(uint64_t seed) : key_(mix64(seed ^ 0x8f1bbcdcbfa53e0bULL)) {}

  // Independent substream labeled by `stream`.
  SplitRng split(uint64_t stream) const {
    return SplitRng(mix64(key_ ^ (mix64(stream) | 1ULL)), Rekey{});
  }

  uint64_t next_u64() { return at(counter_++); }

  // Uniform in the open interval (0,1), 53-bit resolution.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two counters per call.
  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  std::vector<double> gaussian_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = gaussian();
    return out;
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  uint64_t key() const { return key_; }

 private:
  struct Rekey {};
  SplitRng(uint64_t key, Rekey) : key_(key) {}

  uint64_t at(uint64_t n) const {
    return mix64(key_ + n * 0x9e3779b97f4a7c15ULL);
  }

  static uint64_t mix64(uint64_t z) {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace syncgap

#endif  // SYNCGAP_RNG_HPP
