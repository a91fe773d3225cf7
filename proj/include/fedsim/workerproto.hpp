// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/feddata.hpp"

namespace fedsim {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class MsgTag : uint8_t { Task = 0, Result = 1, Heartbeat = 2, Shutdown = 3 };

// Largest accepted payload; oversize frames are rejected before allocation.
constexpr uint32_t kMaxPayloadBytes = 64u << 20;

// Training task. Params cross this boundary as float32 so every transport
// (in-process or socket) hands workers bit-identical inputs.
struct TaskMsg {
  uint64_t task_id = 0;
  uint32_t round = 0;
  std::string client_id;
  uint64_t seed = 0;
  uint32_t local_steps = 0;
  uint32_t batch_size = 0;
  double lr = 0.0;
  double prox_mu = 0.0;
  uint8_t corrupted = 0;
  uint8_t flip_kind = 0;  // 0 rotate, 1 fixed target
  uint32_t flip_target = 0;
  std::vector<float> params;

  bool operator==(const TaskMsg&) const = default;
};

struct ResultMsg {
  uint64_t task_id = 0;
  std::string client_id;
  uint64_t num_samples = 0;
  std::vector<float> delta;
  double wall_ms = 0.0;  // physical, diagnostic only; never feeds the clock

  bool operator==(const ResultMsg&) const = default;
};

// Payload layout: little-endian integers and f64 scalars, u32-length strings,
// u32-count float32 vectors. Decoders reject trailing bytes.
std::string encode_task(const TaskMsg& msg);
TaskMsg decode_task(const std::string& payload);
std::string encode_result(const ResultMsg& msg);
ResultMsg decode_result(const std::string& payload);

// Frame: 4-byte big-endian payload length, 1-byte tag, payload.
std::string encode_frame(MsgTag tag, const std::string& payload);

struct Frame {
  MsgTag tag = MsgTag::Heartbeat;
  std::string payload;
};

// Parses one complete frame occupying the whole buffer. Truncated or
// oversized frames, unknown tags, and trailing bytes raise ProtocolError.
Frame parse_frame(const std::string& buffer);

using TaskFn = std::function<ResultMsg(const TaskMsg&)>;

// Builds the worker-side executor over an immutable dataset. The caller keeps
// cfg and dataset alive for the runner's lifetime.
TaskFn make_task_runner(const ExperimentConfig& cfg, const FederatedDataset& dataset);

// Task transport. Results may arrive in any physical order; the engine keys
// them by task_id, so pool size never changes simulated output.
class Dispatcher {
 public:
  virtual ~Dispatcher() = default;
  virtual void submit(TaskMsg task) = 0;
  // Blocks for the next completed task. Throws on worker failure after the
  // single allowed retry, and on duplicate or unknown task_ids.
  virtual ResultMsg next_result() = 0;
  virtual size_t worker_count() const = 0;
};

// In-process pool of single-task-at-a-time threads over a FIFO queue.
class LocalDispatcher : public Dispatcher {
 public:
  LocalDispatcher(size_t workers, TaskFn fn);
  ~LocalDispatcher() override;
  void submit(TaskMsg task) override;
  ResultMsg next_result() override;
  size_t worker_count() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Listens for `fedsim-worker --connect host:port` processes; tasks go to the
// least-loaded (at most one outstanding) worker, excess queues FIFO. A worker
// missing two 5 s heartbeats is treated as disconnected and its task is
// re-queued once; a second failure of the same task is fatal.
class SocketDispatcher : public Dispatcher {
 public:
  // Binds host:port (port 0 picks a free port) and waits for `workers`
  // connections.
  SocketDispatcher(const std::string& host, uint16_t port, size_t workers);
  ~SocketDispatcher() override;
  void submit(TaskMsg task) override;
  ResultMsg next_result() override;
  size_t worker_count() const override;
  uint16_t port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Worker main loop: connect, heartbeat every 5 s, execute tasks until
// Shutdown or server disconnect. Returns 0 on clean exit.
int run_worker(const std::string& host, uint16_t port, const TaskFn& fn);

}  // namespace fedsim
