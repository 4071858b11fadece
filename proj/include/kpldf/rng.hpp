#pragma once

// Deterministic randomness. Everything random in this library flows through
// Rng: MT19937-64 (the algorithm is pinned by the C++ standard, unlike the
// distributions) plus explicit 53-bit uniform mapping and a hand-rolled
// Fisher-Yates shuffle. std::uniform_real_distribution and std::shuffle are
// implementation-defined and would break cross-platform reproducibility of
// datasets and weight initialisation.

#include <cstdint>
#include <random>
#include <vector>

namespace kpldf {

// SplitMix64 finalizer, used to derive decorrelated substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Substream `tag` of a base seed. Distinct tags give independent streams,
  // so instances can be generated in parallel yet reproduce the sequential
  // result.
  static Rng substream(std::uint64_t seed, std::uint64_t tag) {
    return Rng(splitmix64(seed ^ splitmix64(tag)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0,1) with 53-bit resolution.
  double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on [lo,hi).
  double next_double(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0,n), bias-free via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates, swapping from the back.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace kpldf
