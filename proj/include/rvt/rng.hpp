#pragma once

#include <cstdint>
#include <string_view>

namespace rvt {

// Deterministic splitmix64 generator. Distributions are implemented here
// rather than with <random> adaptors so that streams are reproducible
// across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // uniform in [0, 1)
  double uniform();
  // uniform in [lo, hi)
  double uniform(double lo, double hi);
  // standard normal via Box-Muller (one fresh pair per two draws)
  double normal();
  double normal(double mean, double stddev);
  bool bernoulli(double p);
  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stream splitting: hash a parent seed together with a label so that every
// consumer (per parameter, per session, per fold) gets an independent stream
// no matter in which order streams are created.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace rvt
