// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/feddata.hpp"

namespace fedsim {

enum class ModelKind : uint8_t { Logistic = 0, Mlp = 1 };

// Dense classifier over feature_dim inputs and num_classes outputs.
// Logistic: params = [W (C x D), b (C)].
// Mlp: params = [W1 (H x D), b1 (H), W2 (C x H), b2 (C)], tanh hidden layer.
// Server math runs in double; transport and checkpoints quantize to float32,
// and byte_size reflects that 32-bit serialization.
struct ModelState {
  ModelKind kind = ModelKind::Logistic;
  uint32_t num_classes = 0;
  uint32_t feature_dim = 0;
  uint32_t hidden = 0;  // 0 for Logistic
  std::vector<double> params;

  size_t param_count() const;
  uint64_t byte_size() const { return static_cast<uint64_t>(params.size()) * 4; }
};

struct ModelUpdate {
  std::string client_id;
  std::vector<double> delta;  // final - round_initial
  uint64_t num_samples = 0;   // client training-set size (aggregation weight)
  uint64_t byte_size = 0;
};

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; biases zero.
ModelState init_model(ModelKind kind, uint32_t num_classes, uint32_t feature_dim, uint32_t hidden,
                      uint64_t seed);

// Mean cross-entropy over the index subset and its exact gradient (same
// layout as params). Returns the loss.
double loss_and_grad(const ModelState& model, const DataView& data, const size_t* idx,
                     size_t count, std::vector<double>& grad);

double loss_and_grad(const ModelState& model, const DataView& data, std::vector<double>& grad);

int32_t predict(const ModelState& model, const float* x);

struct TrainParams {
  uint32_t local_steps = 20;
  uint32_t batch_size = 32;
  double lr = 0.04;
  double prox_mu = 0.0;  // 0 disables the proximal term
};

// K steps of mini-batch SGD from the round model:
//   w <- w - lr * (grad + prox_mu * (w - w_round)).
// Batches of min(batch_size, |data|) are taken sequentially from a stream of
// concatenated epoch shuffles. Deterministic in seed.
ModelUpdate local_train(const ModelState& round_model, const DataView& data,
                        const TrainParams& params, uint64_t seed);

// Samples a client processes per round; drives the compute-latency model.
uint64_t samples_processed(const TrainParams& params, size_t client_size);

// Round-initial params cross the task boundary as float32 regardless of
// transport, so local and remote execution see bit-identical inputs.
std::vector<float> params_to_f32(const std::vector<double>& params);
std::vector<double> params_from_f32(const std::vector<float>& params);

// Checkpoint: magic "FSM1", kind byte, dims, count, float32 LE params.
void save_checkpoint(const std::string& path, const ModelState& model);
ModelState load_checkpoint(const std::string& path);

}  // namespace fedsim
