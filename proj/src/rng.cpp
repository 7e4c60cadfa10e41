#include "loraguard/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace loraguard {

namespace {

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint32_t Rng::uniform_below(uint32_t n) {
  if (n == 0) throw std::invalid_argument("Rng::uniform_below: n must be positive");
  return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

float Rng::normal(float mean, float stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * static_cast<float>(spare_);
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * static_cast<float>(radius * std::cos(angle));
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t derive_seed(uint64_t root_seed, std::string_view stream_name) {
  uint64_t sm = root_seed ^ fnv1a64(stream_name);
  // One extra mixing round keeps nearby root seeds from producing
  // correlated stream seeds.
  uint64_t mixed = splitmix64(sm);
  return splitmix64(mixed);
}

}  // namespace loraguard
