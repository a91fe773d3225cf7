// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedsim {

// splitmix64 finalizer; bijective on 64-bit words.
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t hash_label(std::string_view label);

// Child-stream key derivation: (parent seed, purpose label, round, client id).
// Labels are hashed, so adding a new consumer label never perturbs existing
// streams.
uint64_t derive_seed(uint64_t parent, std::string_view label, uint64_t round = 0,
                     std::string_view client_id = {});

// Deterministic random stream. The engine is std::mt19937_64 (bit-stable
// across standard libraries); all distributions are implemented here because
// std:: distribution outputs are not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n). n must be > 0.
  uint64_t bounded(uint64_t n);

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Log-uniform over [lo, hi], lo > 0.
  double log_uniform(double lo, double hi);

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double exponential(double mean);

  // exp(N(log(median), sigma_log)).
  double log_normal(double median, double sigma_log);

  // Marsaglia-Tsang gamma(alpha, 1), alpha > 0.
  double gamma(double alpha);

  // Symmetric Dirichlet(alpha * 1_k).
  std::vector<double> dirichlet(double alpha, size_t k);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(bounded(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // k distinct values from [0, n), order randomized.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedsim
