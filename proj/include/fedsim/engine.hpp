// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "fedsim/aggregation.hpp"
#include "fedsim/config.hpp"
#include "fedsim/feddata.hpp"
#include "fedsim/learning.hpp"
#include "fedsim/traces.hpp"
#include "fedsim/workerproto.hpp"

namespace fedsim {

// Simulated-time source; advanced only by the event queue, never by physical
// time.
struct VirtualClock {
  double now_s = 0.0;

  void advance_to(double t);
};

enum class EventKind : uint8_t { ClientDone = 0, ClientDropped = 1, RoundClosed = 2, EvalDue = 3 };

struct SimEvent {
  double at_s = 0.0;
  EventKind kind = EventKind::ClientDone;
  std::string client_id;
};

// Total order (at_s, kind rank, client_id); pops are deterministic no matter
// the insertion or physical completion order.
bool event_before(const SimEvent& a, const SimEvent& b);

class EventQueue {
 public:
  void push(SimEvent e);
  SimEvent pop();
  bool empty() const { return heap_.empty(); }
  size_t size() const { return heap_.size(); }

 private:
  std::vector<SimEvent> heap_;
};

struct ClientTaskOutcome {
  std::string client_id;
  double down_s = 0.0;
  double compute_s = 0.0;
  double up_s = 0.0;
  double total_s = 0.0;
  bool completed = false;  // false: dropped on slot expiry
  bool admitted = false;
};

struct RoundRow {
  uint32_t round = 0;
  double virtual_time_s = 0.0;  // clock at round close
  uint32_t selected = 0;
  uint32_t admitted = 0;
  uint32_t dropped = 0;
  double round_duration_s = 0.0;
  uint64_t bytes_down = 0;
  uint64_t bytes_up = 0;
  std::optional<double> test_accuracy;
};

struct RoundRecord {
  RoundRow row;
  std::vector<ClientTaskOutcome> per_client;  // ascending client_id
};

// Pluggable participant-selection strategy; receives prior round outcomes as
// feedback. Must return distinct ids drawn from `available`.
using SelectionHook = std::function<std::vector<std::string>(
    const std::vector<std::string>& available, size_t request, uint32_t round,
    const std::vector<RoundRecord>& history)>;

// Default strategy: seeded uniform draw without replacement. Returns
// min(request, |available|) ids in ascending order.
std::vector<std::string> select_participants(const std::vector<std::string>& available,
                                             size_t request, uint64_t seed, uint32_t round,
                                             const SelectionHook& hook = {},
                                             const std::vector<RoundRecord>& history = {});

struct ClientDuration {
  double down_s = 0.0;
  double compute_s = 0.0;
  double up_s = 0.0;

  double total() const { return down_s + compute_s + up_s; }
};

// compute_s = samples * latency_ms / 1000
// down_s    = 8 * bytes_down / 1000 / down_kbps
// up_s      = 8 * bytes_up / 1000 / up_kbps
ClientDuration client_duration(const ClientProfile& profile, uint64_t samples_processed,
                               uint64_t model_bytes_down, uint64_t update_bytes_up);

// Stand-in profile when traces are disabled: 10 ms/sample, 10 Mbps each way,
// always available.
ClientProfile uniform_profile(const std::string& client_id);

struct EvalResult {
  double overall_accuracy = 0.0;
  std::map<std::string, double> per_client;  // client_id -> accuracy
  uint64_t total_samples = 0;
};

// Deterministic full pass over the split's clients.
EvalResult evaluate(const ModelState& model, const FederatedDataset& dataset, SplitRole split);

FederatedDataset build_dataset(const ExperimentConfig& cfg);

// Synth traces are generated per dataset client id; file traces must cover
// every train client.
TraceSet build_traces(const ExperimentConfig& cfg, const FederatedDataset& dataset);

ModelState build_model(const ExperimentConfig& cfg);

struct RunOptions {
  std::string out_dir;  // empty: no files written
  bool emit_timelines = false;
  bool emit_client_acc = false;
  size_t workers = 1;
  // External task transport (e.g. SocketDispatcher); defaults to an internal
  // LocalDispatcher over `workers` threads.
  Dispatcher* dispatcher = nullptr;
  SelectionHook selection;
};

struct RunResult {
  std::vector<RoundRow> rows;
  std::vector<RoundRecord> records;
  double final_accuracy = 0.0;  // last evaluation; NaN if never evaluated
  std::map<std::string, double> final_client_accuracy;
  uint64_t total_bytes = 0;         // sum over rows
  uint64_t total_bytes_ledger = 0;  // independent per-event counter
  uint32_t stalls = 0;
  double virtual_now_s = 0.0;
  ModelState final_model;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const RoundRow& row);

// Runs the full experiment: per round, availability-aware selection with
// overcommit, trace-driven client durations, slot-expiry dropout, first-N
// admission in event order, DP/defense, FedAvg combine and the configured
// server step, periodic evaluation. MetricsLog rows are appended and flushed
// as each round closes.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

}  // namespace fedsim
