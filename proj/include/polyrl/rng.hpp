#pragma once
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

namespace polyrl {

// SplitMix64 step; the standard finalizer keeps derived seeds well spread.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Hierarchical substream key: root seed folded with a path of indices so any
// single vine / set draw / shuffle is reproducible in isolation.
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
  uint64_t k = root;
  for (uint64_t p : path) k = mix_seed(k, p);
  return k;
}

// Stage tags for substream derivation. Values are part of the determinism
// contract: changing them changes every sampled trajectory.
namespace streams {
constexpr uint64_t seed_rollout = 0x101;
constexpr uint64_t vine = 0x102;
constexpr uint64_t form_sets = 0x103;
constexpr uint64_t shuffle = 0x104;
constexpr uint64_t pretrain = 0x105;
constexpr uint64_t eval = 0x106;
constexpr uint64_t perturb = 0x107;
constexpr uint64_t init = 0x108;
constexpr uint64_t demo = 0x109;
constexpr uint64_t theory = 0x10a;
}  // namespace streams

// Wraps mt19937_64 with hand-rolled draws: std::uniform_*_distribution is not
// pinned by the standard, and the metrics logs must be bit-stable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  // Unbiased draw from {0, ..., n-1} by rejection.
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    uint64_t un = uint64_t(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do { x = gen_(); } while (x >= limit);
    return int(x % un);
  }

  // CDF walk; the final index absorbs rounding slack.
  int categorical(const std::vector<double>& probs) {
    double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return int(i);
    }
    return int(probs.size()) - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(int(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

inline Rng make_rng(uint64_t root, std::initializer_list<uint64_t> path) {
  return Rng(derive_seed(root, path));
}

}  // namespace polyrl
