#ifndef RANKFLUX_RANDOM_HPP
#define RANKFLUX_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "rankflux/common.hpp"

namespace rankflux {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Named-substream derivation: (master seed, label, index) -> independent
// stream. Adding new labels never perturbs existing streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = fnv1a(label);
  h = fnv1a(&index, sizeof(index), h);
  h = fnv1a(&master, sizeof(master), h);
  return splitmix64(h);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}
  RngStream(std::uint64_t master, std::string_view label, std::uint64_t index = 0)
      : gen_(derive_seed(master, label, index)) {}

  double uniform() { return unif_(gen_); }
  double normal() { return norm_(gen_); }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::vector<double> normals(std::size_t count, double mean = 0.0, double stddev = 1.0) {
    std::vector<double> out(count);
    for (auto& v : out) v = normal(mean, stddev);
    return out;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

}  // namespace rankflux

#endif  // RANKFLUX_RANDOM_HPP
