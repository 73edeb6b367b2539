#pragma once

// Deterministic RNG used everywhere. Mapping from engine output to doubles
// is done by hand so streams are pinned regardless of standard library:
// the same seed produces the same stream on every build of this project.

#include <cstdint>
#include <random>
#include <string_view>

namespace labr {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive an independent stream seed from (master, tag, index).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t h = master ^ 0x51afd1edULL;
  for (char c : tag) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h = splitmix64(h);
  }
  h ^= index * 0x2545f4914f6cdd1dULL;
  return splitmix64(h);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    return n == 0 ? 0 : eng_() % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform_index(
                    static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, deterministic.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace labr
