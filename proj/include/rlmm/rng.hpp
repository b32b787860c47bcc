// Counter-based seeding and a reproducible normal sampler. One independent
// stream per replication, identical across platforms and standard libraries
// (std::normal_distribution and std::shuffle are implementation-defined, so
// Box-Muller and Fisher-Yates are spelled out here).
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rlmm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Stream seed for replication `index` under a master seed.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x51ED270B9A3E1FC5ULL));
}

/// mt19937_64-backed sampler with uniform, bounded-integer and standard
/// normal draws, all fully specified.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

  /// Uniform double in (0, 1].
  double uniform() { return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53; }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) { return eng_() % bound; }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rlmm
