// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "fedsim/engine.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/workerproto.hpp"
#include "util.hpp"

using namespace fedsim;

namespace {

TaskMsg random_task(Rng& rng) {
  TaskMsg t;
  t.task_id = rng.next_u64();
  t.round = static_cast<uint32_t>(rng.bounded(1000));
  t.client_id = "c" + std::to_string(rng.bounded(100000));
  t.seed = rng.next_u64();
  t.local_steps = static_cast<uint32_t>(rng.bounded(100) + 1);
  t.batch_size = static_cast<uint32_t>(rng.bounded(64) + 1);
  t.lr = rng.uniform(1e-4, 1.0);
  t.prox_mu = rng.uniform(0.0, 0.1);
  t.corrupted = static_cast<uint8_t>(rng.bounded(2));
  t.flip_kind = static_cast<uint8_t>(rng.bounded(2));
  t.flip_target = static_cast<uint32_t>(rng.bounded(10));
  t.params.resize(rng.bounded(50));
  for (auto& p : t.params) p = static_cast<float>(rng.normal());
  return t;
}

ResultMsg random_result(Rng& rng) {
  ResultMsg r;
  r.task_id = rng.next_u64();
  r.client_id = "c" + std::to_string(rng.bounded(100000));
  r.num_samples = rng.bounded(5000) + 1;
  r.delta.resize(rng.bounded(50));
  for (auto& d : r.delta) d = static_cast<float>(rng.normal());
  r.wall_ms = rng.uniform(0.0, 1e4);
  return r;
}

// Deterministic toy executor: delta[i] = params[i] + task_id.
ResultMsg toy_fn(const TaskMsg& t) {
  ResultMsg r;
  r.task_id = t.task_id;
  r.client_id = t.client_id;
  r.num_samples = 1;
  r.delta.resize(t.params.size());
  for (size_t i = 0; i < t.params.size(); ++i)
    r.delta[i] = t.params[i] + static_cast<float>(t.task_id);
  return r;
}

ExperimentConfig tiny_cfg() {
  KeyValues kv{{"algorithm", "fedavg"},       {"total_rounds", "1"},
               {"data.clients", "4"},         {"data.num_classes", "3"},
               {"data.feature_dim", "4"},     {"data.samples_median", "6"},
               {"data.samples_sigma_log", "0"}, {"local_steps", "2"},
               {"batch_size", "4"},           {"traces_enabled", "false"}};
  return config_from_keys(kv);
}

}  // namespace

TEST_SUITE("workerproto") {

TEST_CASE("task and result codecs round-trip") {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    TaskMsg t = random_task(rng);
    CHECK(decode_task(encode_task(t)) == t);
    ResultMsg r = random_result(rng);
    CHECK(decode_result(encode_result(r)) == r);
  }
}

TEST_CASE("frames round-trip every tag") {
  for (auto tag : {MsgTag::Task, MsgTag::Result, MsgTag::Heartbeat, MsgTag::Shutdown}) {
    std::string payload = tag == MsgTag::Heartbeat ? "" : "some bytes";
    Frame f = parse_frame(encode_frame(tag, payload));
    CHECK(f.tag == tag);
    CHECK(f.payload == payload);
  }
}

TEST_CASE("every truncation of a valid frame is rejected") {
  Rng rng(2);
  std::string frame = encode_frame(MsgTag::Task, encode_task(random_task(rng)));
  for (size_t len = 0; len < frame.size(); ++len)
    CHECK_THROWS_AS(parse_frame(frame.substr(0, len)), ProtocolError);
  CHECK_THROWS_AS(parse_frame(frame + "x"), ProtocolError);
}

TEST_CASE("unknown tags and oversize lengths are rejected") {
  std::string frame = encode_frame(MsgTag::Heartbeat, "");
  for (int tag : {4, 5, 17, 255}) {
    std::string bad = frame;
    bad[4] = static_cast<char>(tag);
    CHECK_THROWS_AS(parse_frame(bad), ProtocolError);
  }

  std::string huge(4, '\xff');  // 4 GiB length prefix
  huge.push_back('\0');
  CHECK_THROWS_AS(parse_frame(huge), ProtocolError);

  CHECK_THROWS_AS(encode_frame(MsgTag::Task, std::string(kMaxPayloadBytes + 1, 'a')),
                  ProtocolError);
}

TEST_CASE("truncated payloads fail decoding without crashing") {
  Rng rng(3);
  TaskMsg t = random_task(rng);
  std::string payload = encode_task(t);
  for (size_t len = 0; len < payload.size(); len += 3)
    CHECK_THROWS_AS(decode_task(payload.substr(0, len)), ProtocolError);
  CHECK_THROWS_AS(decode_task(payload + "zz"), ProtocolError);

  ResultMsg r = random_result(rng);
  std::string rp = encode_result(r);
  for (size_t len = 0; len < rp.size(); len += 3)
    CHECK_THROWS_AS(decode_result(rp.substr(0, len)), ProtocolError);
}

TEST_CASE("local dispatcher returns every result exactly once") {
  for (size_t workers : {1, 4}) {
    LocalDispatcher pool(workers, toy_fn);
    CHECK(pool.worker_count() == workers);
    Rng rng(4);
    std::map<uint64_t, TaskMsg> sent;
    for (int i = 0; i < 24; ++i) {
      TaskMsg t = random_task(rng);
      t.task_id = static_cast<uint64_t>(i + 1);
      sent[t.task_id] = t;
      pool.submit(t);
    }
    std::set<uint64_t> got;
    for (int i = 0; i < 24; ++i) {
      ResultMsg r = pool.next_result();
      CHECK(got.insert(r.task_id).second);
      const TaskMsg& t = sent.at(r.task_id);
      REQUIRE(r.delta.size() == t.params.size());
      for (size_t k = 0; k < r.delta.size(); ++k)
        CHECK(r.delta[k] == t.params[k] + static_cast<float>(t.task_id));
    }
    CHECK(got.size() == 24);
  }
}

TEST_CASE("local dispatcher surfaces task failures") {
  LocalDispatcher pool(2, [](const TaskMsg& t) -> ResultMsg {
    if (t.task_id == 13) throw std::runtime_error("boom");
    return toy_fn(t);
  });
  TaskMsg t;
  t.task_id = 13;
  pool.submit(t);
  try {
    pool.next_result();
    FAIL("expected failure to propagate");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("worker task failed") != std::string::npos);
  }
}

TEST_CASE("task runner trains the named client deterministically") {
  auto cfg = tiny_cfg();
  auto dataset = build_dataset(cfg);
  auto runner = make_task_runner(cfg, dataset);

  auto model = build_model(cfg);
  TaskMsg task;
  task.task_id = 5;
  task.round = 0;
  task.client_id = dataset.train_clients.front();
  task.seed = 42;
  task.local_steps = 2;
  task.batch_size = 4;
  task.lr = 0.05;
  task.params = params_to_f32(model.params);

  ResultMsg r1 = runner(task);
  ResultMsg r2 = runner(task);
  CHECK(r1.task_id == 5);
  CHECK(r1.client_id == task.client_id);
  CHECK(r1.delta == r2.delta);
  CHECK(r1.num_samples == dataset.clients.at(task.client_id).size());
  REQUIRE(r1.delta.size() == model.params.size());

  // A corrupted task trains against flipped labels, so the update differs.
  TaskMsg poisoned = task;
  poisoned.corrupted = 1;
  poisoned.flip_kind = 0;
  ResultMsg rp = runner(poisoned);
  CHECK(rp.delta != r1.delta);

  TaskMsg unknown = task;
  unknown.client_id = "nobody";
  CHECK_THROWS(runner(unknown));

  TaskMsg short_params = task;
  short_params.params.resize(3);
  CHECK_THROWS(runner(short_params));
}

TEST_CASE("socket dispatcher matches in-process results") {
  auto cfg = tiny_cfg();
  auto dataset = build_dataset(cfg);
  auto runner = make_task_runner(cfg, dataset);
  auto model = build_model(cfg);

  std::vector<TaskMsg> tasks;
  uint64_t next_id = 1;
  for (const auto& id : dataset.train_clients) {
    TaskMsg t;
    t.task_id = next_id++;
    t.round = 0;
    t.client_id = id;
    t.seed = derive_seed(cfg.seed, "train", 0, id);
    t.local_steps = cfg.local_steps;
    t.batch_size = cfg.batch_size;
    t.lr = 0.05;
    t.params = params_to_f32(model.params);
    tasks.push_back(t);
  }

  std::map<uint64_t, ResultMsg> local;
  {
    LocalDispatcher pool(2, runner);
    for (const auto& t : tasks) pool.submit(t);
    for (size_t i = 0; i < tasks.size(); ++i) {
      ResultMsg r = pool.next_result();
      local[r.task_id] = r;
    }
  }

  std::map<uint64_t, ResultMsg> remote;
  {
    // The dispatcher constructor blocks until both workers connect, so the
    // port must be known before construction: reserve one, then let the
    // workers retry until the listener is up.
    uint16_t port = testutil::reserve_port();
    auto connect_loop = [&runner, port] {
      for (int attempt = 0; attempt < 500; ++attempt) {
        if (run_worker("127.0.0.1", port, runner) == 0) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    };
    std::thread w1(connect_loop);
    std::thread w2(connect_loop);
    auto server = std::make_unique<SocketDispatcher>("127.0.0.1", port, 2);
    CHECK(server->worker_count() == 2);
    CHECK(server->port() == port);
    for (const auto& t : tasks) server->submit(t);
    for (size_t i = 0; i < tasks.size(); ++i) {
      ResultMsg r = server->next_result();
      remote[r.task_id] = r;
    }
    server.reset();  // sends Shutdown; workers exit cleanly
    w1.join();
    w2.join();
  }

  REQUIRE(local.size() == remote.size());
  for (const auto& [id, r] : local) {
    const ResultMsg& o = remote.at(id);
    CHECK(r.client_id == o.client_id);
    CHECK(r.num_samples == o.num_samples);
    CHECK(r.delta == o.delta);
  }
}

}  // TEST_SUITE
