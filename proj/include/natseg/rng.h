#ifndef NATSEG_RNG_H_
#define NATSEG_RNG_H_

#include <cstdint>
#include <random>
#include <vector>

namespace natseg {

// Seeded generator with platform-independent value transforms. The standard
// distributions are implementation-defined, so bit-reproducibility across
// toolchains needs the conversions written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Box-Muller; the second variate is cached.
  double normal();

  // Normal resampled until |z| <= 2.
  double truncated_normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes several integers into one seed (splitmix64 finaliser).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace natseg

#endif  // NATSEG_RNG_H_
