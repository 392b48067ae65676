#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace onedm {

// Deterministic RNG. std::mt19937_64 has a portable bit stream, but the
// std distributions do not, so the mappings to uniform/normal/int live here.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

  // derive an independent stream, e.g. rng.fork("corpus")
  Rng fork(const std::string& tag) const {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : tag) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return Rng(seed_ ^ h);
  }

  uint64_t raw() { return eng_(); }

  // uniform in [0,1)
  double uniform() {
    return double(eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range
  int64_t randint(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    // modulo bias is irrelevant at our span sizes but rejection is cheap
    uint64_t lim = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
      r = eng_();
    } while (r >= lim);
    return lo + int64_t(r % span);
  }

  // Box-Muller, one value per call (the cached twin would make draw order
  // depend on call parity, which is a trap for reproducibility)
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <class It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = randint(0, i);
      std::swap(first[i], first[j]);
    }
  }

private:
  std::mt19937_64 eng_;
  uint64_t seed_;
};

}  // namespace onedm
