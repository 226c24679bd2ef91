#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vfl {

// Deterministic random source. mt19937_64 output is fixed by the standard;
// the float/normal/bounded-int conversions below are hand-rolled because the
// std::*_distribution classes are implementation-defined and would break
// cross-party reproducibility.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 bits of mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  float uniform_float(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  // Unbiased integer in [0, n) via rejection sampling.
  uint64_t below(uint64_t n);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates permutation of 0..n-1, deterministic in seed.
std::vector<size_t> permutation(size_t n, uint64_t seed);

template <typename T>
void shuffle_in_place(std::vector<T>& v, uint64_t seed) {
  DetRng rng(seed);
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace vfl
