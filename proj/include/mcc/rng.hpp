#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mcc {

// Deterministic RNG. The mt19937_64 engine output is pinned by the standard;
// std::*_distribution is not, so every draw is converted by hand here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform index in [0, n)
  std::size_t index(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(gen_() % n); }

  // inclusive integer range
  int range(int lo, int hi) { return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo + 1))); }

  double gaussian(double mu = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + sigma * spare_;
    }
    const double two_pi = 6.283185307179586;
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return mu + sigma * r * std::cos(two_pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer, used to decorrelate derived seeds
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent named stream from a master seed. Streams with distinct ids are
// decorrelated, so consuming one never shifts another.
inline Rng derive_stream(std::uint64_t master, std::uint64_t stream_id) {
  return Rng(mix64(mix64(master) ^ mix64(stream_id)));
}

}  // namespace mcc
