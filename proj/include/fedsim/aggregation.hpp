// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/learning.hpp"

namespace fedsim {

// FedYoGi server-optimizer state; v starts at tau^2 elementwise.
struct ServerOptState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t round = 0;

  static ServerOptState init(size_t dim, double tau);
};

// Sample-count weighted mean of deltas.
std::vector<double> fedavg_combine(const std::vector<ModelUpdate>& updates);

// FedAvg/FedProx: w += delta. FedYoGi:
//   m <- b1 m + (1-b1) delta
//   v <- v - (1-b2) delta^2 sign(v - delta^2)
//   w += eta * m / (sqrt(v) + tau)
void server_step(Algorithm algorithm, const ExperimentConfig& cfg, ServerOptState& state,
                 ModelState& model, const std::vector<double>& combined);

// Central DP on one client update: L2-clip to clip_c, then add
// N(0, (sigma * clip_c)^2) per coordinate from the seeded stream.
ModelUpdate dp_sanitize(const ModelUpdate& update, double clip_c, double sigma,
                        uint64_t noise_seed);

// L2-clip only (poisoning defense).
ModelUpdate defense_clip(const ModelUpdate& update, double bound);

double l2_norm(const std::vector<double>& v);

}  // namespace fedsim
