#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace loraguard {

// Deterministic random source (xoshiro256++ with hand-rolled distributions).
// The generator and every distribution are implemented here rather than taken
// from <random> so that a given seed produces identical streams on every
// platform and standard library.
//
// All randomness in the project flows from one root seed through named
// streams: derive_seed(root, "stage-name") gives each pipeline stage its own
// independent stream, so adding or reordering stages never perturbs the
// streams of existing ones.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on [0, 1); 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n); n must be positive.
  uint32_t uniform_below(uint32_t n);

  // Gaussian via Box-Muller, one spare cached.
  float normal(float mean, float stddev);

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t fnv1a64(std::string_view s);

// Seed for the named sub-stream of a root seed.
uint64_t derive_seed(uint64_t root_seed, std::string_view stream_name);

inline Rng derive_stream(uint64_t root_seed, std::string_view stream_name) {
  return Rng(derive_seed(root_seed, stream_name));
}

}  // namespace loraguard
