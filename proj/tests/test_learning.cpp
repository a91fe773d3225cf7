// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "fedsim/learning.hpp"
#include "fedsim/rng.hpp"
#include "util.hpp"

using namespace fedsim;

namespace {

ClientData make_random_client(uint32_t n, uint32_t dim, uint32_t classes, uint64_t seed) {
  Rng rng(seed);
  ClientData data;
  data.features.resize(static_cast<size_t>(n) * dim);
  data.labels.resize(n);
  for (auto& f : data.features) f = static_cast<float>(rng.normal());
  for (auto& y : data.labels) y = static_cast<int32_t>(rng.bounded(classes));
  return data;
}

// Central finite difference on randomly chosen coordinates.
double max_grad_rel_error(ModelState model, const DataView& view, uint64_t seed) {
  std::vector<double> grad;
  loss_and_grad(model, view, grad);
  Rng rng(seed);
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    size_t i = static_cast<size_t>(rng.bounded(model.params.size()));
    double keep = model.params[i];
    std::vector<double> unused;
    model.params[i] = keep + h;
    double up = loss_and_grad(model, view, unused);
    model.params[i] = keep - h;
    double dn = loss_and_grad(model, view, unused);
    model.params[i] = keep;
    double numeric = (up - dn) / (2.0 * h);
    double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_SUITE("learning") {

TEST_CASE("parameter counts match the layer shapes") {
  auto logistic = init_model(ModelKind::Logistic, 10, 32, 0, 1);
  CHECK(logistic.param_count() == 330);  // 10*32 + 10
  CHECK(logistic.params.size() == 330);
  CHECK(logistic.byte_size() == 1320);

  auto mlp = init_model(ModelKind::Mlp, 10, 32, 64, 1);
  CHECK(mlp.param_count() == 2762);  // 32*64 + 64 + 64*10 + 10
  CHECK(mlp.byte_size() == 11048);
}

TEST_CASE("init draws bounded weights and zero biases") {
  auto m = init_model(ModelKind::Logistic, 4, 9, 0, 7);
  double bound = 1.0 / 3.0;  // 1/sqrt(9)
  for (size_t i = 0; i < 36; ++i) {
    CHECK(m.params[i] <= bound);
    CHECK(m.params[i] >= -bound);
  }
  for (size_t i = 36; i < 40; ++i) CHECK(m.params[i] == 0.0);

  auto same = init_model(ModelKind::Logistic, 4, 9, 0, 7);
  CHECK(same.params == m.params);
  auto other = init_model(ModelKind::Logistic, 4, 9, 0, 8);
  CHECK(other.params != m.params);
}

TEST_CASE("gradients match finite differences") {
  for (int rep = 0; rep < 5; ++rep) {
    auto data = make_random_client(8, 6, 4, 100 + rep);
    DataView view{&data, 6, 4, false, {}};

    auto logistic = init_model(ModelKind::Logistic, 4, 6, 0, 200 + rep);
    CHECK(max_grad_rel_error(logistic, view, 300 + rep) < 1e-4);

    auto mlp = init_model(ModelKind::Mlp, 4, 6, 5, 200 + rep);
    CHECK(max_grad_rel_error(mlp, view, 400 + rep) < 1e-4);
  }
}

TEST_CASE("gradients see flipped labels through the view") {
  auto data = make_random_client(16, 4, 3, 1);
  DataView clean{&data, 4, 3, false, {}};
  DataView flipped{&data, 4, 3, true, {}};  // rotate
  auto model = init_model(ModelKind::Logistic, 3, 4, 0, 2);
  std::vector<double> g1, g2;
  loss_and_grad(model, clean, g1);
  loss_and_grad(model, flipped, g2);
  CHECK(g1 != g2);
}

TEST_CASE("subset gradient equals full gradient on the identity subset") {
  auto data = make_random_client(10, 5, 3, 3);
  DataView view{&data, 5, 3, false, {}};
  auto model = init_model(ModelKind::Logistic, 3, 5, 0, 4);
  std::vector<size_t> idx(10);
  for (size_t i = 0; i < 10; ++i) idx[i] = i;
  std::vector<double> g1, g2;
  double l1 = loss_and_grad(model, view, idx.data(), idx.size(), g1);
  double l2 = loss_and_grad(model, view, g2);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("zero model predicts the lowest class index") {
  auto m = init_model(ModelKind::Logistic, 5, 3, 0, 1);
  std::fill(m.params.begin(), m.params.end(), 0.0);
  float x[3] = {0.5f, -1.0f, 2.0f};
  CHECK(predict(m, x) == 0);
}

TEST_CASE("one full-batch step on one sample is an exact SGD step") {
  auto data = make_random_client(1, 4, 3, 5);
  DataView view{&data, 4, 3, false, {}};
  auto model = init_model(ModelKind::Logistic, 3, 4, 0, 6);

  std::vector<double> grad;
  loss_and_grad(model, view, grad);

  TrainParams tp;
  tp.local_steps = 1;
  tp.batch_size = 8;
  tp.lr = 0.1;
  auto update = local_train(model, view, tp, 7);
  REQUIRE(update.delta.size() == model.params.size());
  CHECK(update.num_samples == 1);
  for (size_t i = 0; i < grad.size(); ++i)
    CHECK(update.delta[i] == doctest::Approx(-0.1 * grad[i]).epsilon(1e-12));
}

TEST_CASE("local_train is deterministic in its seed") {
  auto data = make_random_client(40, 6, 4, 8);
  DataView view{&data, 6, 4, false, {}};
  auto model = init_model(ModelKind::Logistic, 4, 6, 0, 9);
  TrainParams tp;
  auto u1 = local_train(model, view, tp, 77);
  auto u2 = local_train(model, view, tp, 77);
  auto u3 = local_train(model, view, tp, 78);
  CHECK(u1.delta == u2.delta);
  CHECK(u1.delta != u3.delta);
}

TEST_CASE("training lowers the loss") {
  auto data = make_random_client(64, 6, 4, 10);
  DataView view{&data, 6, 4, false, {}};
  auto model = init_model(ModelKind::Logistic, 4, 6, 0, 11);
  std::vector<double> g;
  double before = loss_and_grad(model, view, g);

  TrainParams tp;
  tp.local_steps = 200;
  tp.batch_size = 16;
  tp.lr = 0.1;
  auto update = local_train(model, view, tp, 12);
  for (size_t i = 0; i < model.params.size(); ++i) model.params[i] += update.delta[i];
  double after = loss_and_grad(model, view, g);
  CHECK(after < before);
}

TEST_CASE("two proximal steps match the hand-applied update rule") {
  // One sample and batch 1 make every batch that sample, so the trajectory
  // is w1 = w0 - lr*g(w0), w2 = w1 - lr*(g(w1) + mu*(w1 - w0)).
  auto data = make_random_client(1, 4, 3, 13);
  DataView view{&data, 4, 3, false, {}};
  auto w0 = init_model(ModelKind::Logistic, 3, 4, 0, 14);

  TrainParams tp;
  tp.local_steps = 2;
  tp.batch_size = 1;
  tp.lr = 0.1;
  tp.prox_mu = 3.0;
  auto update = local_train(w0, view, tp, 15);

  std::vector<double> g;
  loss_and_grad(w0, view, g);
  ModelState w1 = w0;
  for (size_t i = 0; i < w1.params.size(); ++i) w1.params[i] -= tp.lr * g[i];
  loss_and_grad(w1, view, g);
  for (size_t i = 0; i < w1.params.size(); ++i) {
    double expected =
        w1.params[i] - tp.lr * (g[i] + tp.prox_mu * (w1.params[i] - w0.params[i])) - w0.params[i];
    CHECK(update.delta[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("the proximal term shrinks how far the iterate drifts") {
  auto data = make_random_client(32, 6, 4, 13);
  DataView view{&data, 6, 4, false, {}};
  auto model = init_model(ModelKind::Logistic, 4, 6, 0, 14);

  // lr*mu = 1 keeps the recursion stable and every iterate within one
  // gradient step of the round model.
  TrainParams loose;
  loose.local_steps = 200;
  loose.lr = 0.01;
  TrainParams pinned = loose;
  pinned.prox_mu = 100.0;

  auto free_run = local_train(model, view, loose, 15);
  auto prox_run = local_train(model, view, pinned, 15);
  double free_norm = 0.0, prox_norm = 0.0;
  for (double d : free_run.delta) free_norm += d * d;
  for (double d : prox_run.delta) prox_norm += d * d;
  CHECK(std::sqrt(prox_norm) < 0.2 * std::sqrt(free_norm));
}

TEST_CASE("samples_processed caps the batch at the client size") {
  TrainParams tp;
  tp.local_steps = 7;
  tp.batch_size = 32;
  CHECK(samples_processed(tp, 10) == 70);
  CHECK(samples_processed(tp, 100) == 224);
  CHECK(samples_processed(tp, 32) == 224);
}

TEST_CASE("float32 task boundary is idempotent") {
  std::vector<double> params = {0.1, -2.5, 1e-7, 3.14159265358979, -1e8};
  auto f1 = params_to_f32(params);
  auto d1 = params_from_f32(f1);
  auto f2 = params_to_f32(d1);
  CHECK(f1 == f2);
  auto d2 = params_from_f32(f2);
  CHECK(d1 == d2);
}

TEST_CASE("checkpoints round-trip through float32") {
  testutil::TempDir tmp;
  auto model = init_model(ModelKind::Mlp, 4, 6, 5, 21);
  save_checkpoint(tmp.file("m.bin"), model);
  auto back = load_checkpoint(tmp.file("m.bin"));
  CHECK(back.kind == ModelKind::Mlp);
  CHECK(back.num_classes == 4);
  CHECK(back.feature_dim == 6);
  CHECK(back.hidden == 5);
  CHECK(back.params == params_from_f32(params_to_f32(model.params)));
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  testutil::TempDir tmp;
  auto model = init_model(ModelKind::Logistic, 3, 4, 0, 22);
  save_checkpoint(tmp.file("m.bin"), model);

  auto bytes = testutil::read_file(tmp.file("m.bin"));
  bytes[0] = 'X';
  testutil::write_file(tmp.file("bad_magic.bin"), bytes);
  CHECK_THROWS(load_checkpoint(tmp.file("bad_magic.bin")));

  auto truncated = testutil::read_file(tmp.file("m.bin"));
  truncated.resize(truncated.size() - 3);
  testutil::write_file(tmp.file("trunc.bin"), truncated);
  CHECK_THROWS(load_checkpoint(tmp.file("trunc.bin")));

  CHECK_THROWS(load_checkpoint(tmp.file("absent.bin")));
}

}  // TEST_SUITE
