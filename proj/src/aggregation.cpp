// SPDX-License-Identifier: Apache-2.0

#include "fedsim/aggregation.hpp"

#include <cmath>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim {

ServerOptState ServerOptState::init(size_t dim, double tau) {
  ServerOptState s;
  s.m.assign(dim, 0.0);
  s.v.assign(dim, tau * tau);
  return s;
}

double l2_norm(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

std::vector<double> fedavg_combine(const std::vector<ModelUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg_combine: no updates");
  size_t dim = updates[0].delta.size();
  std::vector<double> out(dim, 0.0);
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.delta.size() != dim) throw std::invalid_argument("fedavg_combine: length mismatch");
    if (u.num_samples == 0) throw std::invalid_argument("fedavg_combine: zero-weight update");
    auto w = static_cast<double>(u.num_samples);
    total += w;
    for (size_t i = 0; i < dim; ++i) out[i] += w * u.delta[i];
  }
  for (size_t i = 0; i < dim; ++i) out[i] /= total;
  return out;
}

void server_step(Algorithm algorithm, const ExperimentConfig& cfg, ServerOptState& state,
                 ModelState& model, const std::vector<double>& combined) {
  if (combined.size() != model.params.size())
    throw std::invalid_argument("server_step: length mismatch");

  if (algorithm == Algorithm::FedAvg || algorithm == Algorithm::FedProx) {
    for (size_t i = 0; i < combined.size(); ++i) model.params[i] += combined[i];
  } else {
    if (state.m.size() != combined.size() || state.v.size() != combined.size())
      throw std::invalid_argument("server_step: state length mismatch");
    const double b1 = cfg.fedyogi_beta1;
    const double b2 = cfg.fedyogi_beta2;
    const double eta = cfg.fedyogi_eta;
    const double tau = cfg.fedyogi_tau;
    for (size_t i = 0; i < combined.size(); ++i) {
      double d = combined[i];
      double d2 = d * d;
      state.m[i] = b1 * state.m[i] + (1.0 - b1) * d;
      double sign = state.v[i] > d2 ? 1.0 : (state.v[i] < d2 ? -1.0 : 0.0);
      state.v[i] -= (1.0 - b2) * d2 * sign;
      model.params[i] += eta * state.m[i] / (std::sqrt(state.v[i]) + tau);
    }
  }
  state.round++;
}

namespace {

ModelUpdate clip_to(const ModelUpdate& update, double bound) {
  ModelUpdate out = update;
  double norm = l2_norm(out.delta);
  if (norm > bound) {
    double scale = bound / norm;
    for (double& d : out.delta) d *= scale;
  }
  return out;
}

}  // namespace

ModelUpdate dp_sanitize(const ModelUpdate& update, double clip_c, double sigma,
                        uint64_t noise_seed) {
  if (!(clip_c > 0.0)) throw std::invalid_argument("dp_sanitize: clip_c must be > 0");
  if (sigma < 0.0) throw std::invalid_argument("dp_sanitize: sigma must be >= 0");
  ModelUpdate out = clip_to(update, clip_c);
  if (sigma > 0.0) {
    Rng rng(noise_seed);
    double stddev = sigma * clip_c;
    for (double& d : out.delta) d += rng.normal(0.0, stddev);
  }
  return out;
}

ModelUpdate defense_clip(const ModelUpdate& update, double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("defense_clip: bound must be > 0");
  return clip_to(update, bound);
}

}  // namespace fedsim
