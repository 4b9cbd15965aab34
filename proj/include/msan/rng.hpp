#pragma once

#include <cstdint>
#include <vector>

namespace msan {

// SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter-based generator
// with a fixed output permutation. We use it everywhere randomness is
// needed so that runs are bit-identical across platforms; the standard
// <random> distributions are implementation-defined and would not be.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform integer in [0, n) via the 128-bit multiply reduction.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool next_bernoulli(double p) { return next_unit() < p; }

  // Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream, e.g. one per epoch or per purpose.
  SplitMix64 fork(std::uint64_t stream) {
    SplitMix64 g(state_ ^ (0xA0761D6478BD642Full * (stream + 1)));
    g.next_u64();
    return g;
  }

 private:
  std::uint64_t state_;
};

}  // namespace msan
