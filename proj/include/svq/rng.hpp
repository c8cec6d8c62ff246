#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace svq {

// Mixes a base seed with stream tags (item index, step, purpose) into an
// independent seed. Callers own their streams; nothing here is shared.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

// Deterministic generator with distribution code written out explicitly, so
// draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();                      // [0, 1), 53 bits
  double uniform(double lo, double hi);  // [lo, hi)
  std::uint64_t below(std::uint64_t n);  // [0, n), unbiased
  double normal();                       // standard normal
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace svq
