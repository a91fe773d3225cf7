// SPDX-License-Identifier: Apache-2.0

#include "fedsim/workerproto.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "fedsim/adversary.hpp"
#include "fedsim/learning.hpp"

namespace fedsim {

namespace {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void f32vec(const std::vector<float>& v) {
    u32(static_cast<uint32_t>(v.size()));
    for (float x : v) {
      uint32_t bits;
      std::memcpy(&bits, &x, 4);
      u32(bits);
    }
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[off_++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf_[off_ + i])) << (8 * i);
    off_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf_[off_ + i])) << (8 * i);
    off_ += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(off_, n);
    off_ += n;
    return s;
  }
  std::vector<float> f32vec() {
    uint32_t n = u32();
    need(static_cast<size_t>(n) * 4);
    std::vector<float> v(n);
    for (uint32_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<uint32_t>(static_cast<uint8_t>(buf_[off_ + b])) << (8 * b);
      off_ += 4;
      std::memcpy(&v[i], &bits, 4);
    }
    return v;
  }
  void finish() const {
    if (off_ != buf_.size()) throw ProtocolError("payload has trailing bytes");
  }

 private:
  void need(size_t n) const {
    if (off_ + n > buf_.size()) throw ProtocolError("payload truncated");
  }
  const std::string& buf_;
  size_t off_ = 0;
};

}  // namespace

std::string encode_task(const TaskMsg& msg) {
  Writer w;
  w.u64(msg.task_id);
  w.u32(msg.round);
  w.str(msg.client_id);
  w.u64(msg.seed);
  w.u32(msg.local_steps);
  w.u32(msg.batch_size);
  w.f64(msg.lr);
  w.f64(msg.prox_mu);
  w.u8(msg.corrupted);
  w.u8(msg.flip_kind);
  w.u32(msg.flip_target);
  w.f32vec(msg.params);
  return w.take();
}

TaskMsg decode_task(const std::string& payload) {
  Reader r(payload);
  TaskMsg m;
  m.task_id = r.u64();
  m.round = r.u32();
  m.client_id = r.str();
  m.seed = r.u64();
  m.local_steps = r.u32();
  m.batch_size = r.u32();
  m.lr = r.f64();
  m.prox_mu = r.f64();
  m.corrupted = r.u8();
  m.flip_kind = r.u8();
  m.flip_target = r.u32();
  m.params = r.f32vec();
  r.finish();
  return m;
}

std::string encode_result(const ResultMsg& msg) {
  Writer w;
  w.u64(msg.task_id);
  w.str(msg.client_id);
  w.u64(msg.num_samples);
  w.f32vec(msg.delta);
  w.f64(msg.wall_ms);
  return w.take();
}

ResultMsg decode_result(const std::string& payload) {
  Reader r(payload);
  ResultMsg m;
  m.task_id = r.u64();
  m.client_id = r.str();
  m.num_samples = r.u64();
  m.delta = r.f32vec();
  m.wall_ms = r.f64();
  r.finish();
  return m;
}

std::string encode_frame(MsgTag tag, const std::string& payload) {
  if (payload.size() > kMaxPayloadBytes) throw ProtocolError("frame exceeds max payload size");
  std::string out;
  out.reserve(5 + payload.size());
  auto len = static_cast<uint32_t>(payload.size());
  out.push_back(static_cast<char>((len >> 24) & 0xff));
  out.push_back(static_cast<char>((len >> 16) & 0xff));
  out.push_back(static_cast<char>((len >> 8) & 0xff));
  out.push_back(static_cast<char>(len & 0xff));
  out.push_back(static_cast<char>(tag));
  out.append(payload);
  return out;
}

Frame parse_frame(const std::string& buffer) {
  if (buffer.size() < 5) throw ProtocolError("frame truncated: missing header");
  uint32_t len = (static_cast<uint32_t>(static_cast<uint8_t>(buffer[0])) << 24) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buffer[1])) << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buffer[2])) << 8) |
                 static_cast<uint32_t>(static_cast<uint8_t>(buffer[3]));
  if (len > kMaxPayloadBytes) throw ProtocolError("frame exceeds max payload size");
  auto tag_byte = static_cast<uint8_t>(buffer[4]);
  if (tag_byte > 3)
    throw ProtocolError("unknown frame tag " + std::to_string(static_cast<int>(tag_byte)));
  if (buffer.size() < 5 + static_cast<size_t>(len))
    throw ProtocolError("frame truncated: payload shorter than declared length");
  if (buffer.size() > 5 + static_cast<size_t>(len))
    throw ProtocolError("frame has trailing bytes");
  Frame f;
  f.tag = static_cast<MsgTag>(tag_byte);
  f.payload = buffer.substr(5, len);
  return f;
}

TaskFn make_task_runner(const ExperimentConfig& cfg, const FederatedDataset& dataset) {
  ModelKind kind = cfg.model == ModelKindCfg::Mlp ? ModelKind::Mlp : ModelKind::Logistic;
  uint32_t hidden = kind == ModelKind::Mlp ? cfg.mlp_hidden : 0;
  const FederatedDataset* ds = &dataset;
  return [kind, hidden, ds](const TaskMsg& task) -> ResultMsg {
    auto start = std::chrono::steady_clock::now();
    auto it = ds->clients.find(task.client_id);
    if (it == ds->clients.end())
      throw std::runtime_error("task for unknown client '" + task.client_id + "'");

    ModelState model;
    model.kind = kind;
    model.num_classes = ds->num_classes;
    model.feature_dim = ds->feature_dim;
    model.hidden = hidden;
    model.params = params_from_f32(task.params);
    if (model.params.size() != model.param_count())
      throw std::runtime_error("task param count mismatch for client '" + task.client_id + "'");

    DataView view;
    if (task.corrupted) {
      FlipRuleCfg rule;
      rule.kind = task.flip_kind == 0 ? FlipRuleCfg::Kind::Rotate : FlipRuleCfg::Kind::FixedTarget;
      rule.target = static_cast<int>(task.flip_target);
      view = poison_view(it->second, ds->feature_dim, ds->num_classes, rule);
    } else {
      view = clean_view(it->second, ds->feature_dim, ds->num_classes);
    }

    TrainParams tp;
    tp.local_steps = task.local_steps;
    tp.batch_size = task.batch_size;
    tp.lr = task.lr;
    tp.prox_mu = task.prox_mu;
    ModelUpdate update = local_train(model, view, tp, task.seed);

    ResultMsg result;
    result.task_id = task.task_id;
    result.client_id = task.client_id;
    result.num_samples = update.num_samples;
    result.delta = params_to_f32(update.delta);
    result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               start)
                         .count();
    return result;
  };
}

// ---------------------------------------------------------------------------
// LocalDispatcher

struct LocalDispatcher::Impl {
  TaskFn fn;
  std::vector<std::thread> threads;
  std::mutex mu;
  std::condition_variable task_cv;
  std::condition_variable result_cv;
  std::deque<TaskMsg> tasks;
  std::deque<ResultMsg> results;
  std::string error;
  bool stop = false;

  void worker_loop() {
    while (true) {
      TaskMsg task;
      {
        std::unique_lock<std::mutex> lock(mu);
        task_cv.wait(lock, [&] { return stop || !tasks.empty(); });
        if (stop && tasks.empty()) return;
        task = std::move(tasks.front());
        tasks.pop_front();
      }
      try {
        ResultMsg result = fn(task);
        std::lock_guard<std::mutex> lock(mu);
        results.push_back(std::move(result));
        result_cv.notify_all();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        if (error.empty()) error = e.what();
        result_cv.notify_all();
      }
    }
  }
};

LocalDispatcher::LocalDispatcher(size_t workers, TaskFn fn) : impl_(new Impl) {
  impl_->fn = std::move(fn);
  size_t n = std::max<size_t>(workers, 1);
  impl_->threads.reserve(n);
  for (size_t i = 0; i < n; ++i)
    impl_->threads.emplace_back([impl = impl_.get()] { impl->worker_loop(); });
}

LocalDispatcher::~LocalDispatcher() {
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->stop = true;
  }
  impl_->task_cv.notify_all();
  for (auto& t : impl_->threads) t.join();
}

void LocalDispatcher::submit(TaskMsg task) {
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->tasks.push_back(std::move(task));
  }
  impl_->task_cv.notify_one();
}

ResultMsg LocalDispatcher::next_result() {
  std::unique_lock<std::mutex> lock(impl_->mu);
  impl_->result_cv.wait(lock, [&] { return !impl_->results.empty() || !impl_->error.empty(); });
  if (impl_->results.empty()) throw std::runtime_error("worker task failed: " + impl_->error);
  ResultMsg r = std::move(impl_->results.front());
  impl_->results.pop_front();
  return r;
}

size_t LocalDispatcher::worker_count() const { return impl_->threads.size(); }

// ---------------------------------------------------------------------------
// Socket helpers

namespace {

constexpr auto kHeartbeatPeriod = std::chrono::seconds(5);
// Two missed heartbeats; slack for scheduling jitter.
constexpr auto kHeartbeatTimeout = std::chrono::seconds(11);

void write_all(int fd, const std::string& data) {
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) throw ProtocolError("socket write failed");
    off += static_cast<size_t>(n);
  }
}

// Reads exactly n bytes; false on clean EOF at a frame boundary.
bool read_exact(int fd, char* out, size_t n, bool eof_ok) {
  size_t off = 0;
  while (off < n) {
    ssize_t got = ::recv(fd, out + off, n - off, 0);
    if (got == 0) {
      if (off == 0 && eof_ok) return false;
      throw ProtocolError("connection closed mid-frame");
    }
    if (got < 0) throw ProtocolError("socket read failed");
    off += static_cast<size_t>(got);
  }
  return true;
}

// Reads one frame; false on clean EOF before a new frame starts.
bool read_frame(int fd, Frame& frame) {
  char header[5];
  if (!read_exact(fd, header, 5, /*eof_ok=*/true)) return false;
  uint32_t len = (static_cast<uint32_t>(static_cast<uint8_t>(header[0])) << 24) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(header[1])) << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(header[2])) << 8) |
                 static_cast<uint32_t>(static_cast<uint8_t>(header[3]));
  if (len > kMaxPayloadBytes) throw ProtocolError("frame exceeds max payload size");
  auto tag = static_cast<uint8_t>(header[4]);
  if (tag > 3) throw ProtocolError("unknown frame tag " + std::to_string(static_cast<int>(tag)));
  frame.tag = static_cast<MsgTag>(tag);
  frame.payload.resize(len);
  if (len > 0) read_exact(fd, frame.payload.data(), len, /*eof_ok=*/false);
  return true;
}

int connect_to(const std::string& host, uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw ProtocolError("cannot resolve " + host);
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw ProtocolError("cannot create socket");
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    ::close(fd);
    ::freeaddrinfo(res);
    throw ProtocolError("cannot connect to " + host + ":" + std::to_string(port));
  }
  ::freeaddrinfo(res);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return fd;
}

}  // namespace

// ---------------------------------------------------------------------------
// SocketDispatcher

struct SocketDispatcher::Impl {
  struct Worker {
    int fd = -1;
    bool alive = false;
    std::set<uint64_t> outstanding;
    std::chrono::steady_clock::time_point last_seen;
    std::thread reader;
    std::mutex write_mu;
  };

  int listen_fd = -1;
  uint16_t port = 0;
  std::vector<std::unique_ptr<Worker>> workers;
  std::mutex mu;
  std::condition_variable result_cv;
  std::deque<ResultMsg> results;
  std::deque<TaskMsg> pending;            // FIFO overflow queue
  std::map<uint64_t, TaskMsg> in_flight;  // task_id -> task (for retry)
  std::map<uint64_t, int> retries;
  std::set<uint64_t> completed;
  std::string error;

  void fail(const std::string& msg) {
    if (error.empty()) error = msg;
    result_cv.notify_all();
  }

  // mu held.
  void send_task_locked(Worker& w, const TaskMsg& task) {
    w.outstanding.insert(task.task_id);
    in_flight[task.task_id] = task;
    std::string frame = encode_frame(MsgTag::Task, encode_task(task));
    std::lock_guard<std::mutex> wl(w.write_mu);
    write_all(w.fd, frame);
  }

  // mu held. Least-outstanding worker, lowest index on ties.
  Worker* pick_worker_locked() {
    Worker* best = nullptr;
    for (auto& w : workers) {
      if (!w->alive) continue;
      if (w->outstanding.size() >= 1) continue;  // single-task executors
      if (!best || w->outstanding.size() < best->outstanding.size()) best = w.get();
    }
    return best;
  }

  // mu held.
  void drain_pending_locked() {
    while (!pending.empty()) {
      Worker* w = pick_worker_locked();
      if (!w) return;
      TaskMsg task = std::move(pending.front());
      pending.pop_front();
      send_task_locked(*w, task);
    }
  }

  // mu held.
  void drop_worker_locked(Worker& w, const std::string& why) {
    if (!w.alive) return;
    w.alive = false;
    ::shutdown(w.fd, SHUT_RDWR);
    for (uint64_t id : w.outstanding) {
      int& r = retries[id];
      if (r >= 1) {
        fail("task " + std::to_string(id) + " failed twice (" + why + ")");
        return;
      }
      r++;
      pending.push_back(in_flight.at(id));
    }
    w.outstanding.clear();
    bool any_alive = false;
    for (auto& other : workers) any_alive |= other->alive;
    if (!any_alive && (!pending.empty() || !in_flight.empty())) {
      fail("all workers disconnected (" + why + ")");
      return;
    }
    drain_pending_locked();
  }

  void reader_loop(Worker* w) {
    try {
      while (true) {
        Frame frame;
        if (!read_frame(w->fd, frame)) break;
        std::lock_guard<std::mutex> lock(mu);
        w->last_seen = std::chrono::steady_clock::now();
        if (frame.tag == MsgTag::Heartbeat) continue;
        if (frame.tag != MsgTag::Result) {
          fail("unexpected frame tag from worker");
          return;
        }
        ResultMsg result = decode_result(frame.payload);
        if (completed.count(result.task_id)) {
          fail("duplicate result for task " + std::to_string(result.task_id));
          return;
        }
        if (!in_flight.count(result.task_id)) {
          fail("result for unknown task " + std::to_string(result.task_id));
          return;
        }
        completed.insert(result.task_id);
        in_flight.erase(result.task_id);
        w->outstanding.erase(result.task_id);
        results.push_back(std::move(result));
        drain_pending_locked();
        result_cv.notify_all();
      }
      std::lock_guard<std::mutex> lock(mu);
      drop_worker_locked(*w, "worker disconnected");
      result_cv.notify_all();
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      drop_worker_locked(*w, e.what());
      result_cv.notify_all();
    }
  }

  // mu held.
  void reap_stale_locked() {
    auto now = std::chrono::steady_clock::now();
    for (auto& w : workers) {
      if (w->alive && !w->outstanding.empty() && now - w->last_seen > kHeartbeatTimeout) {
        ::shutdown(w->fd, SHUT_RDWR);  // reader thread observes the close
      }
    }
  }
};

SocketDispatcher::SocketDispatcher(const std::string& host, uint16_t port, size_t workers)
    : impl_(new Impl) {
  if (workers < 1) throw std::invalid_argument("SocketDispatcher: need >= 1 worker");

  impl_->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (impl_->listen_fd < 0) throw ProtocolError("cannot create listen socket");
  int one = 1;
  ::setsockopt(impl_->listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ProtocolError("bad listen address: " + host);
  if (::bind(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw ProtocolError("cannot bind " + host + ":" + std::to_string(port));
  if (::listen(impl_->listen_fd, static_cast<int>(workers)) != 0)
    throw ProtocolError("listen failed");

  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(impl_->listen_fd, reinterpret_cast<sockaddr*>(&bound), &blen);
  impl_->port = ntohs(bound.sin_port);

  for (size_t i = 0; i < workers; ++i) {
    int fd = ::accept(impl_->listen_fd, nullptr, nullptr);
    if (fd < 0) throw ProtocolError("accept failed");
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto w = std::make_unique<Impl::Worker>();
    w->fd = fd;
    w->alive = true;
    w->last_seen = std::chrono::steady_clock::now();
    impl_->workers.push_back(std::move(w));
  }
  for (auto& w : impl_->workers)
    w->reader = std::thread([impl = impl_.get(), wp = w.get()] { impl->reader_loop(wp); });
}

SocketDispatcher::~SocketDispatcher() {
  std::string shutdown_frame = encode_frame(MsgTag::Shutdown, "");
  for (auto& w : impl_->workers) {
    std::lock_guard<std::mutex> lock(w->write_mu);
    if (w->alive) {
      try {
        write_all(w->fd, shutdown_frame);
      } catch (...) {
      }
    }
    ::shutdown(w->fd, SHUT_RDWR);
  }
  for (auto& w : impl_->workers) {
    if (w->reader.joinable()) w->reader.join();
    ::close(w->fd);
  }
  if (impl_->listen_fd >= 0) ::close(impl_->listen_fd);
}

void SocketDispatcher::submit(TaskMsg task) {
  std::lock_guard<std::mutex> lock(impl_->mu);
  if (!impl_->error.empty()) throw std::runtime_error(impl_->error);
  impl_->pending.push_back(std::move(task));
  impl_->drain_pending_locked();
}

ResultMsg SocketDispatcher::next_result() {
  std::unique_lock<std::mutex> lock(impl_->mu);
  while (true) {
    if (!impl_->error.empty()) throw std::runtime_error(impl_->error);
    if (!impl_->results.empty()) {
      ResultMsg r = std::move(impl_->results.front());
      impl_->results.pop_front();
      return r;
    }
    impl_->reap_stale_locked();
    impl_->result_cv.wait_for(lock, std::chrono::milliseconds(500));
  }
}

size_t SocketDispatcher::worker_count() const { return impl_->workers.size(); }

uint16_t SocketDispatcher::port() const { return impl_->port; }

// ---------------------------------------------------------------------------
// Worker loop

int run_worker(const std::string& host, uint16_t port, const TaskFn& fn) {
  int fd = connect_to(host, port);
  std::mutex write_mu;
  bool stop = false;
  std::mutex stop_mu;
  std::condition_variable stop_cv;

  {
    std::lock_guard<std::mutex> lock(write_mu);
    write_all(fd, encode_frame(MsgTag::Heartbeat, ""));
  }
  std::thread heartbeat([&] {
    std::unique_lock<std::mutex> lock(stop_mu);
    while (!stop_cv.wait_for(lock, kHeartbeatPeriod, [&] { return stop; })) {
      try {
        std::lock_guard<std::mutex> wl(write_mu);
        write_all(fd, encode_frame(MsgTag::Heartbeat, ""));
      } catch (...) {
        return;  // server gone; reader loop exits on its own
      }
    }
  });

  int rc = 0;
  try {
    while (true) {
      Frame frame;
      if (!read_frame(fd, frame)) break;
      if (frame.tag == MsgTag::Shutdown) break;
      if (frame.tag == MsgTag::Heartbeat) continue;
      if (frame.tag != MsgTag::Task) throw ProtocolError("unexpected frame tag at worker");
      TaskMsg task = decode_task(frame.payload);
      ResultMsg result = fn(task);
      std::lock_guard<std::mutex> wl(write_mu);
      write_all(fd, encode_frame(MsgTag::Result, encode_result(result)));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "worker error: %s\n", e.what());
    rc = 1;
  }

  {
    std::lock_guard<std::mutex> lock(stop_mu);
    stop = true;
  }
  stop_cv.notify_all();
  heartbeat.join();
  ::close(fd);
  return rc;
}

}  // namespace fedsim
