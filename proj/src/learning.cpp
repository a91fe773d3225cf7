// SPDX-License-Identifier: Apache-2.0

#include "fedsim/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

size_t logistic_count(uint32_t c, uint32_t d) { return static_cast<size_t>(c) * d + c; }

size_t mlp_count(uint32_t c, uint32_t d, uint32_t h) {
  return static_cast<size_t>(d) * h + h + static_cast<size_t>(h) * c + c;
}

void check_dims(const ModelState& m, const DataView& data) {
  if (data.feature_dim != m.feature_dim)
    throw std::invalid_argument("model/data feature_dim mismatch");
  if (data.num_classes != m.num_classes)
    throw std::invalid_argument("model/data num_classes mismatch");
}

// softmax(z)[y] gradient helper: fills probs from logits in place.
void softmax_inplace(std::vector<double>& z) {
  double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

}  // namespace

size_t ModelState::param_count() const {
  return kind == ModelKind::Logistic ? logistic_count(num_classes, feature_dim)
                                     : mlp_count(num_classes, feature_dim, hidden);
}

ModelState init_model(ModelKind kind, uint32_t num_classes, uint32_t feature_dim, uint32_t hidden,
                      uint64_t seed) {
  if (num_classes < 2 || feature_dim < 1) throw std::invalid_argument("init_model: bad dims");
  if (kind == ModelKind::Mlp && hidden < 1)
    throw std::invalid_argument("init_model: mlp needs hidden >= 1");
  ModelState m;
  m.kind = kind;
  m.num_classes = num_classes;
  m.feature_dim = feature_dim;
  m.hidden = kind == ModelKind::Mlp ? hidden : 0;
  m.params.assign(m.param_count(), 0.0);

  Rng rng(derive_seed(seed, "init"));
  if (kind == ModelKind::Logistic) {
    double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    size_t w = static_cast<size_t>(num_classes) * feature_dim;
    for (size_t i = 0; i < w; ++i) m.params[i] = rng.uniform(-bound, bound);
  } else {
    double bound1 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    size_t w1 = static_cast<size_t>(hidden) * feature_dim;
    size_t off = 0;
    for (size_t i = 0; i < w1; ++i) m.params[off + i] = rng.uniform(-bound1, bound1);
    off += w1 + hidden;  // biases stay zero
    size_t w2 = static_cast<size_t>(num_classes) * hidden;
    for (size_t i = 0; i < w2; ++i) m.params[off + i] = rng.uniform(-bound2, bound2);
  }
  return m;
}

double loss_and_grad(const ModelState& model, const DataView& data, const size_t* idx,
                     size_t count, std::vector<double>& grad) {
  if (count == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  check_dims(model, data);
  grad.assign(model.params.size(), 0.0);

  const uint32_t C = model.num_classes;
  const uint32_t D = model.feature_dim;
  const double inv = 1.0 / static_cast<double>(count);
  double loss = 0.0;

  if (model.kind == ModelKind::Logistic) {
    const double* W = model.params.data();
    const double* b = W + static_cast<size_t>(C) * D;
    double* gW = grad.data();
    double* gb = gW + static_cast<size_t>(C) * D;
    std::vector<double> z(C);
    for (size_t k = 0; k < count; ++k) {
      const float* x = data.row(idx[k]);
      auto y = static_cast<size_t>(data.label(idx[k]));
      for (uint32_t c = 0; c < C; ++c) {
        const double* w = W + static_cast<size_t>(c) * D;
        double dot = b[c];
        for (uint32_t d = 0; d < D; ++d) dot += w[d] * x[d];
        z[c] = dot;
      }
      softmax_inplace(z);
      loss -= std::log(std::max(z[y], 1e-300));
      for (uint32_t c = 0; c < C; ++c) {
        double dz = (z[c] - (c == y ? 1.0 : 0.0)) * inv;
        double* gw = gW + static_cast<size_t>(c) * D;
        for (uint32_t d = 0; d < D; ++d) gw[d] += dz * x[d];
        gb[c] += dz;
      }
    }
  } else {
    const uint32_t H = model.hidden;
    const double* W1 = model.params.data();
    const double* b1 = W1 + static_cast<size_t>(H) * D;
    const double* W2 = b1 + H;
    const double* b2 = W2 + static_cast<size_t>(C) * H;
    double* gW1 = grad.data();
    double* gb1 = gW1 + static_cast<size_t>(H) * D;
    double* gW2 = gb1 + H;
    double* gb2 = gW2 + static_cast<size_t>(C) * H;

    std::vector<double> h(H), z(C), dh(H);
    for (size_t k = 0; k < count; ++k) {
      const float* x = data.row(idx[k]);
      auto y = static_cast<size_t>(data.label(idx[k]));
      for (uint32_t j = 0; j < H; ++j) {
        const double* w = W1 + static_cast<size_t>(j) * D;
        double dot = b1[j];
        for (uint32_t d = 0; d < D; ++d) dot += w[d] * x[d];
        h[j] = std::tanh(dot);
      }
      for (uint32_t c = 0; c < C; ++c) {
        const double* w = W2 + static_cast<size_t>(c) * H;
        double dot = b2[c];
        for (uint32_t j = 0; j < H; ++j) dot += w[j] * h[j];
        z[c] = dot;
      }
      softmax_inplace(z);
      loss -= std::log(std::max(z[y], 1e-300));

      std::fill(dh.begin(), dh.end(), 0.0);
      for (uint32_t c = 0; c < C; ++c) {
        double dz = (z[c] - (c == y ? 1.0 : 0.0)) * inv;
        double* gw = gW2 + static_cast<size_t>(c) * H;
        const double* w = W2 + static_cast<size_t>(c) * H;
        for (uint32_t j = 0; j < H; ++j) {
          gw[j] += dz * h[j];
          dh[j] += dz * w[j];
        }
        gb2[c] += dz;
      }
      for (uint32_t j = 0; j < H; ++j) {
        double da = dh[j] * (1.0 - h[j] * h[j]);
        double* gw = gW1 + static_cast<size_t>(j) * D;
        for (uint32_t d = 0; d < D; ++d) gw[d] += da * x[d];
        gb1[j] += da;
      }
    }
  }
  return loss * inv;
}

double loss_and_grad(const ModelState& model, const DataView& data, std::vector<double>& grad) {
  std::vector<size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return loss_and_grad(model, data, idx.data(), idx.size(), grad);
}

int32_t predict(const ModelState& model, const float* x) {
  const uint32_t C = model.num_classes;
  const uint32_t D = model.feature_dim;
  std::vector<double> z(C);
  if (model.kind == ModelKind::Logistic) {
    const double* W = model.params.data();
    const double* b = W + static_cast<size_t>(C) * D;
    for (uint32_t c = 0; c < C; ++c) {
      const double* w = W + static_cast<size_t>(c) * D;
      double dot = b[c];
      for (uint32_t d = 0; d < D; ++d) dot += w[d] * x[d];
      z[c] = dot;
    }
  } else {
    const uint32_t H = model.hidden;
    const double* W1 = model.params.data();
    const double* b1 = W1 + static_cast<size_t>(H) * D;
    const double* W2 = b1 + H;
    const double* b2 = W2 + static_cast<size_t>(C) * H;
    std::vector<double> h(H);
    for (uint32_t j = 0; j < H; ++j) {
      const double* w = W1 + static_cast<size_t>(j) * D;
      double dot = b1[j];
      for (uint32_t d = 0; d < D; ++d) dot += w[d] * x[d];
      h[j] = std::tanh(dot);
    }
    for (uint32_t c = 0; c < C; ++c) {
      const double* w = W2 + static_cast<size_t>(c) * H;
      double dot = b2[c];
      for (uint32_t j = 0; j < H; ++j) dot += w[j] * h[j];
      z[c] = dot;
    }
  }
  // Lowest class index wins ties.
  return static_cast<int32_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

uint64_t samples_processed(const TrainParams& params, size_t client_size) {
  size_t batch = std::min<size_t>(params.batch_size, client_size);
  return static_cast<uint64_t>(params.local_steps) * batch;
}

ModelUpdate local_train(const ModelState& round_model, const DataView& data,
                        const TrainParams& params, uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("local_train: empty client data");
  check_dims(round_model, data);

  const size_t n = data.size();
  const size_t batch = std::min<size_t>(params.batch_size, n);
  ModelState model = round_model;
  const std::vector<double>& w0 = round_model.params;
  std::vector<double>& w = model.params;

  Rng rng(seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  size_t cursor = 0;

  std::vector<size_t> idx(batch);
  std::vector<double> grad;
  for (uint32_t step = 0; step < params.local_steps; ++step) {
    for (size_t k = 0; k < batch; ++k) {
      if (cursor == n) {
        rng.shuffle(order);
        cursor = 0;
      }
      idx[k] = order[cursor++];
    }
    loss_and_grad(model, data, idx.data(), batch, grad);
    if (params.prox_mu > 0.0) {
      for (size_t i = 0; i < w.size(); ++i)
        w[i] -= params.lr * (grad[i] + params.prox_mu * (w[i] - w0[i]));
    } else {
      for (size_t i = 0; i < w.size(); ++i) w[i] -= params.lr * grad[i];
    }
  }

  ModelUpdate update;
  update.delta.resize(w.size());
  for (size_t i = 0; i < w.size(); ++i) update.delta[i] = w[i] - w0[i];
  update.num_samples = n;
  update.byte_size = round_model.byte_size();
  return update;
}

std::vector<float> params_to_f32(const std::vector<double>& params) {
  std::vector<float> out(params.size());
  for (size_t i = 0; i < params.size(); ++i) out[i] = static_cast<float>(params[i]);
  return out;
}

std::vector<double> params_from_f32(const std::vector<float>& params) {
  std::vector<double> out(params.size());
  for (size_t i = 0; i < params.size(); ++i) out[i] = static_cast<double>(params[i]);
  return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'S', 'M', '1'};

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const char* p) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<uint8_t>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model) {
  std::string buf;
  buf.append(kCheckpointMagic, 4);
  buf.push_back(static_cast<char>(model.kind));
  put_le<uint32_t>(buf, model.num_classes);
  put_le<uint32_t>(buf, model.feature_dim);
  put_le<uint32_t>(buf, model.hidden);
  put_le<uint64_t>(buf, model.params.size());
  for (double p : model.params) {
    float f = static_cast<float>(p);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_le<uint32_t>(buf, bits);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 25 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint header: " + path);
  ModelState m;
  uint8_t kind = static_cast<uint8_t>(buf[4]);
  if (kind > 1) throw std::runtime_error("bad checkpoint model kind: " + path);
  m.kind = static_cast<ModelKind>(kind);
  m.num_classes = get_le<uint32_t>(buf.data() + 5);
  m.feature_dim = get_le<uint32_t>(buf.data() + 9);
  m.hidden = get_le<uint32_t>(buf.data() + 13);
  uint64_t count = get_le<uint64_t>(buf.data() + 17);
  if (buf.size() != 25 + count * 4) throw std::runtime_error("truncated checkpoint: " + path);
  if (count != m.param_count()) throw std::runtime_error("checkpoint size mismatch: " + path);
  m.params.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t bits = get_le<uint32_t>(buf.data() + 25 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    m.params[i] = static_cast<double>(f);
  }
  return m;
}

}  // namespace fedsim
