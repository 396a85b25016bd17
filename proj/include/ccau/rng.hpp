#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ccau {

// Deterministic RNG. std::mt19937_64 is fully specified by the standard,
// but the std distributions are not, so the distributions are implemented
// here to keep generated datasets byte-identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t randint(int64_t n) {
    // rejection sampling to avoid modulo bias
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  // standard normal via Box-Muller (no cached spare; deterministic)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[randint(i + 1)]);
    }
  }

  // derive an independent stream, e.g. one per dataset shard
  Rng fork(uint64_t stream) {
    std::seed_seq seq{static_cast<uint64_t>(engine_()), stream};
    std::vector<uint32_t> seeds(2);
    seq.generate(seeds.begin(), seeds.end());
    return Rng((static_cast<uint64_t>(seeds[0]) << 32) | seeds[1]);
  }

 private:
  explicit Rng(std::mt19937_64 e) : engine_(e) {}
  std::mt19937_64 engine_;
};

}  // namespace ccau
