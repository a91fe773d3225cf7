// SPDX-License-Identifier: Apache-2.0

#include "fedsim/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fedsim {

uint64_t hash_label(std::string_view label) {
  // FNV-1a 64.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t derive_seed(uint64_t parent, std::string_view label, uint64_t round,
                     std::string_view client_id) {
  uint64_t h = mix64(parent ^ 0x6a09e667f3bcc909ULL);
  h = mix64(h ^ hash_label(label));
  h = mix64(h ^ round);
  if (!client_id.empty()) h = mix64(h ^ hash_label(client_id));
  return h;
}

uint64_t Rng::bounded(uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::bounded: n must be > 0");
  // Rejection sampling over the largest multiple of n.
  uint64_t threshold = (-n) % n;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double Rng::log_uniform(double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_uniform: need 0 < lo <= hi");
  return std::exp(uniform(std::log(lo), std::log(hi)));
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::exponential(double mean) {
  if (!(mean > 0.0)) throw std::invalid_argument("exponential: mean must be > 0");
  double u = next_double();
  while (u <= 0.0) u = next_double();
  return -mean * std::log(u);
}

double Rng::log_normal(double median, double sigma_log) {
  if (!(median > 0.0)) throw std::invalid_argument("log_normal: median must be > 0");
  return std::exp(normal(std::log(median), sigma_log));
}

double Rng::gamma(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("gamma: alpha must be > 0");
  if (alpha < 1.0) {
    // Boost to alpha+1 and scale back.
    double u = next_double();
    while (u <= 0.0) u = next_double();
    return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double alpha, size_t k) {
  std::vector<double> out(k);
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) {
    out[i] = gamma(alpha);
    sum += out[i];
  }
  if (sum <= 0.0) {
    // All-underflow corner at tiny alpha: fall back to a random vertex.
    size_t j = static_cast<size_t>(bounded(k));
    for (size_t i = 0; i < k; ++i) out[i] = (i == j) ? 1.0 : 0.0;
    return out;
  }
  for (double& x : out) x /= sum;
  return out;
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first k entries are the sample.
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(bounded(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace fedsim
