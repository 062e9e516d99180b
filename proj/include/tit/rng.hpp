#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tit {

// Seeded PRNG handed around explicitly so every sampling site is reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }
  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }
  int randint(int lo, int hi_inclusive) {
    std::uniform_int_distribution<int> d(lo, hi_inclusive);
    return d(engine_);
  }
  std::uint64_t next_seed() { return engine_(); }

  template <class Real>
  std::vector<Real> normal_vec(std::size_t n, double mean, double stddev) {
    std::vector<Real> v(n);
    for (auto& x : v) x = static_cast<Real>(normal(mean, stddev));
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tit
