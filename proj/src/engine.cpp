// SPDX-License-Identifier: Apache-2.0

#include "fedsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "csv_util.hpp"
#include "fedsim/adversary.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void VirtualClock::advance_to(double t) {
  if (t < now_s) throw std::logic_error("virtual clock cannot move backwards");
  now_s = t;
}

bool event_before(const SimEvent& a, const SimEvent& b) {
  if (a.at_s != b.at_s) return a.at_s < b.at_s;
  if (a.kind != b.kind) return static_cast<uint8_t>(a.kind) < static_cast<uint8_t>(b.kind);
  return a.client_id < b.client_id;
}

namespace {
bool heap_after(const SimEvent& a, const SimEvent& b) { return event_before(b, a); }
}  // namespace

void EventQueue::push(SimEvent e) {
  heap_.push_back(std::move(e));
  std::push_heap(heap_.begin(), heap_.end(), heap_after);
}

SimEvent EventQueue::pop() {
  if (heap_.empty()) throw std::logic_error("pop from empty event queue");
  std::pop_heap(heap_.begin(), heap_.end(), heap_after);
  SimEvent e = std::move(heap_.back());
  heap_.pop_back();
  return e;
}

std::vector<std::string> select_participants(const std::vector<std::string>& available,
                                             size_t request, uint64_t seed, uint32_t round,
                                             const SelectionHook& hook,
                                             const std::vector<RoundRecord>& history) {
  if (request < 1) throw std::invalid_argument("select_participants: request must be >= 1");
  std::vector<std::string> selected;
  if (hook) {
    selected = hook(available, request, round, history);
    if (selected.size() > request)
      throw std::runtime_error("selection hook returned more ids than requested");
    std::set<std::string> pool(available.begin(), available.end());
    std::set<std::string> seen;
    for (const auto& id : selected) {
      if (!pool.count(id))
        throw std::runtime_error("selection hook returned unavailable client '" + id + "'");
      if (!seen.insert(id).second)
        throw std::runtime_error("selection hook returned duplicate client '" + id + "'");
    }
  } else {
    size_t k = std::min(request, available.size());
    Rng rng(derive_seed(seed, "select", round));
    for (size_t i : rng.sample_without_replacement(available.size(), k))
      selected.push_back(available[i]);
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

ClientDuration client_duration(const ClientProfile& profile, uint64_t samples_processed,
                               uint64_t model_bytes_down, uint64_t update_bytes_up) {
  if (profile.compute_latency_ms_per_sample <= 0.0 || profile.down_kbps <= 0.0 ||
      profile.up_kbps <= 0.0)
    throw std::invalid_argument("client_duration: non-positive capacity");
  ClientDuration d;
  d.compute_s =
      static_cast<double>(samples_processed) * profile.compute_latency_ms_per_sample / 1000.0;
  d.down_s = 8.0 * static_cast<double>(model_bytes_down) / 1000.0 / profile.down_kbps;
  d.up_s = 8.0 * static_cast<double>(update_bytes_up) / 1000.0 / profile.up_kbps;
  return d;
}

ClientProfile uniform_profile(const std::string& client_id) {
  ClientProfile p;
  p.client_id = client_id;
  p.compute_latency_ms_per_sample = 10.0;
  p.down_kbps = 10000.0;
  p.up_kbps = 10000.0;
  return p;
}

EvalResult evaluate(const ModelState& model, const FederatedDataset& dataset, SplitRole split) {
  const auto& ids = dataset.split_ids(split);
  if (ids.empty()) throw std::invalid_argument("evaluate: empty split");
  EvalResult result;
  uint64_t total_correct = 0;
  for (const auto& id : ids) {
    const ClientData& data = dataset.clients.at(id);
    uint64_t correct = 0;
    for (size_t i = 0; i < data.size(); ++i) {
      const float* x = data.features.data() + i * dataset.feature_dim;
      if (predict(model, x) == data.labels[i]) ++correct;
    }
    result.per_client[id] = static_cast<double>(correct) / static_cast<double>(data.size());
    total_correct += correct;
    result.total_samples += data.size();
  }
  result.overall_accuracy =
      static_cast<double>(total_correct) / static_cast<double>(result.total_samples);
  return result;
}

FederatedDataset build_dataset(const ExperimentConfig& cfg) {
  SynthTask task = make_synth_task(cfg.num_classes, cfg.feature_dim, cfg.seed);
  PartitionSpec spec;
  spec.mode = cfg.data_source == DataSource::Mapping ? PartitionMode::Mapping : cfg.partition_mode;
  spec.alpha = cfg.dirichlet_alpha;
  spec.mapping_path = cfg.mapping_path;
  spec.samples_median = cfg.samples_median;
  spec.samples_sigma_log = cfg.samples_sigma_log;
  spec.train_frac = cfg.train_frac;
  spec.val_frac = cfg.val_frac;
  return partition(task, cfg.data_clients, spec, cfg.seed);
}

TraceSet build_traces(const ExperimentConfig& cfg, const FederatedDataset& dataset) {
  TraceSet traces;
  if (!cfg.traces_enabled) return traces;
  if (cfg.trace_source == TraceSource::Files) {
    traces.profiles = load_profiles(cfg.profiles_path);
    traces.availability = load_availability(cfg.availability_path);
    for (const auto& id : dataset.train_clients) {
      if (!traces.profiles.count(id))
        throw std::runtime_error("no profile for train client '" + id + "'");
      if (!traces.availability.count(id))
        throw std::runtime_error("no availability trace for train client '" + id + "'");
    }
  } else {
    TraceSynthSpec spec;
    spec.latency_lo_ms = cfg.trace_latency_lo_ms;
    spec.latency_hi_ms = cfg.trace_latency_hi_ms;
    spec.bw_lo_kbps = cfg.trace_bw_lo_kbps;
    spec.bw_hi_kbps = cfg.trace_bw_hi_kbps;
    spec.on_mean_s = cfg.trace_on_mean_s;
    spec.off_mean_s = cfg.trace_off_mean_s;
    spec.peak_hour = cfg.trace_peak_hour;
    spec.horizon_s = cfg.trace_horizon_s;
    std::vector<std::string> ids;
    ids.reserve(dataset.clients.size());
    for (const auto& [id, data] : dataset.clients) {
      (void)data;
      ids.push_back(id);
    }
    traces = synth_traces_for(ids, cfg.seed, spec);
  }
  return traces;
}

ModelState build_model(const ExperimentConfig& cfg) {
  ModelKind kind = cfg.model == ModelKindCfg::Mlp ? ModelKind::Mlp : ModelKind::Logistic;
  return init_model(kind, cfg.num_classes, cfg.feature_dim,
                    kind == ModelKind::Mlp ? cfg.mlp_hidden : 0, cfg.seed);
}

std::string metrics_csv_header() {
  return "round,virtual_time_s,selected,admitted,dropped,round_duration_s,bytes_down,bytes_up,"
         "test_accuracy\n";
}

namespace {

std::string fmt_time(double s) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", s);
  return buf;
}

}  // namespace

std::string metrics_csv_row(const RoundRow& row) {
  std::string out;
  out += std::to_string(row.round);
  out += ',';
  out += fmt_time(row.virtual_time_s);
  out += ',';
  out += std::to_string(row.selected);
  out += ',';
  out += std::to_string(row.admitted);
  out += ',';
  out += std::to_string(row.dropped);
  out += ',';
  out += fmt_time(row.round_duration_s);
  out += ',';
  out += std::to_string(row.bytes_down);
  out += ',';
  out += std::to_string(row.bytes_up);
  out += ',';
  if (row.test_accuracy) out += fmt_time(*row.test_accuracy);
  out += '\n';
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  FederatedDataset dataset = build_dataset(cfg);
  TraceSet traces = build_traces(cfg, dataset);
  ModelState model = build_model(cfg);
  ServerOptState opt = ServerOptState::init(model.params.size(), cfg.fedyogi_tau);

  std::set<std::string> corrupted;
  if (cfg.corrupted_fraction > 0.0) {
    std::vector<std::string> all_ids;
    all_ids.reserve(dataset.clients.size());
    for (const auto& [id, data] : dataset.clients) {
      (void)data;
      all_ids.push_back(id);
    }
    AdversarySpec spec;
    spec.corrupted_fraction = cfg.corrupted_fraction;
    spec.flip_rule = cfg.flip_rule;
    spec.seed = cfg.seed;
    corrupted = mark_corrupted(all_ids, spec);
  }

  TaskFn runner = make_task_runner(cfg, dataset);
  std::unique_ptr<LocalDispatcher> own_dispatcher;
  Dispatcher* dispatcher = opts.dispatcher;
  if (!dispatcher) {
    own_dispatcher =
        std::make_unique<LocalDispatcher>(std::max<size_t>(opts.workers, 1), runner);
    dispatcher = own_dispatcher.get();
  }

  std::ofstream metrics_out, timelines_out;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    metrics_out.open(opts.out_dir + "/metrics.csv");
    if (!metrics_out) throw std::runtime_error("cannot write " + opts.out_dir + "/metrics.csv");
    metrics_out << metrics_csv_header();
    metrics_out.flush();
    if (opts.emit_timelines) {
      timelines_out.open(opts.out_dir + "/timelines.csv");
      if (!timelines_out)
        throw std::runtime_error("cannot write " + opts.out_dir + "/timelines.csv");
      timelines_out << "round,client_id,down_s,compute_s,up_s,completed\n";
      timelines_out.flush();
    }
  }

  SplitRole eval_split = !dataset.test_clients.empty()
                             ? SplitRole::Test
                             : (!dataset.val_clients.empty() ? SplitRole::Val : SplitRole::Train);

  RunResult result;
  result.final_accuracy = std::nan("");
  VirtualClock clock;
  uint64_t next_task_id = 1;
  uint64_t ledger = 0;  // independent byte counter, charged per event
  const uint32_t N = cfg.target_participants;
  const double prox_mu = cfg.algorithm == Algorithm::FedProx ? cfg.fedprox_mu : 0.0;

  for (uint32_t round = 0; round < cfg.total_rounds; ++round) {
    // Availability-gated selection with stall retry.
    std::vector<std::string> available;
    while (true) {
      available.clear();
      for (const auto& id : dataset.train_clients) {
        if (!cfg.traces_enabled) {
          available.push_back(id);
          continue;
        }
        if (is_available(traces.availability.at(id), clock.now_s)) available.push_back(id);
      }
      if (!available.empty()) break;
      result.stalls++;
      if (result.stalls > cfg.max_stalls)
        throw std::runtime_error("no clients ever available: stall limit reached");
      clock.advance_to(clock.now_s + cfg.stall_probe_s);
    }

    auto selected = select_participants(available, cfg.request_size(), cfg.seed, round,
                                        opts.selection, result.records);
    const double lr = effective_lr(cfg, round);
    const double start_s = clock.now_s;
    const uint64_t model_bytes = model.byte_size();
    const auto params_f32 = params_to_f32(model.params);

    RoundRecord record;
    record.row.round = round;
    record.row.selected = static_cast<uint32_t>(selected.size());
    record.per_client.reserve(selected.size());

    EventQueue queue;
    std::map<uint64_t, std::string> task_client;
    std::vector<TaskMsg> to_dispatch;
    to_dispatch.reserve(selected.size());

    TrainParams tp;
    tp.local_steps = cfg.local_steps;
    tp.batch_size = cfg.batch_size;
    tp.lr = lr;
    tp.prox_mu = prox_mu;

    for (const auto& id : selected) {
      const ClientData& data = dataset.clients.at(id);
      const ClientProfile& profile =
          cfg.traces_enabled ? traces.profiles.at(id) : uniform_profile(id);
      ClientDuration dur =
          client_duration(profile, samples_processed(tp, data.size()), model_bytes, model_bytes);

      ClientTaskOutcome outcome;
      outcome.client_id = id;
      outcome.down_s = dur.down_s;
      outcome.compute_s = dur.compute_s;
      outcome.up_s = dur.up_s;
      outcome.total_s = dur.total();

      ledger += model_bytes;  // download charged at selection

      bool drops = false;
      double slot_end_s = 0.0;
      if (cfg.traces_enabled) {
        auto remaining = remaining_slot(traces.availability.at(id), start_s);
        // Selected while available, so a slot exists. Completion exactly at
        // slot end counts as dropped (half-open slots).
        if (dur.total() >= *remaining) {
          drops = true;
          slot_end_s = start_s + *remaining;
        }
      }

      if (drops) {
        record.row.dropped++;
        queue.push({slot_end_s, EventKind::ClientDropped, id});
      } else {
        outcome.completed = true;
        queue.push({start_s + dur.total(), EventKind::ClientDone, id});
        TaskMsg task;
        task.task_id = next_task_id++;
        task.round = round;
        task.client_id = id;
        task.seed = derive_seed(cfg.seed, "train", round, id);
        task.local_steps = cfg.local_steps;
        task.batch_size = cfg.batch_size;
        task.lr = lr;
        task.prox_mu = prox_mu;
        task.corrupted = corrupted.count(id) ? 1 : 0;
        task.flip_kind = cfg.flip_rule.kind == FlipRuleCfg::Kind::Rotate ? 0 : 1;
        task.flip_target = static_cast<uint32_t>(cfg.flip_rule.target);
        task.params = params_f32;
        task_client[task.task_id] = id;
        to_dispatch.push_back(std::move(task));
      }
      record.per_client.push_back(std::move(outcome));
    }

    // Real gradient work on the pool; physical completion order is
    // irrelevant because results are keyed by task_id.
    const size_t expected = to_dispatch.size();
    for (auto& task : to_dispatch) dispatcher->submit(std::move(task));
    std::map<std::string, ModelUpdate> updates;
    std::set<uint64_t> seen;
    for (size_t i = 0; i < expected; ++i) {
      ResultMsg r = dispatcher->next_result();
      auto it = task_client.find(r.task_id);
      if (it == task_client.end())
        throw std::runtime_error("result for unknown task " + std::to_string(r.task_id));
      if (!seen.insert(r.task_id).second)
        throw std::runtime_error("duplicate result for task " + std::to_string(r.task_id));
      ModelUpdate update;
      update.client_id = it->second;
      update.delta = params_from_f32(r.delta);
      update.num_samples = r.num_samples;
      update.byte_size = static_cast<uint64_t>(r.delta.size()) * 4;
      if (update.delta.size() != model.params.size())
        throw std::runtime_error("update length mismatch from client '" + it->second + "'");
      updates.emplace(it->second, std::move(update));
    }

    // Virtual-order event processing: first N completions are admitted, the
    // N-th fixes the round close, equal-time completions still upload, and
    // anything later is cut off.
    const bool eval_due = (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.total_rounds;
    std::vector<std::string> admitted_ids;
    bool close_set = false;
    double close_s = start_s;
    double last_done_s = -1.0;
    double max_event_s = start_s;

    auto aggregate_admitted = [&] {
      if (admitted_ids.empty()) return;
      std::sort(admitted_ids.begin(), admitted_ids.end());
      std::vector<ModelUpdate> batch;
      batch.reserve(admitted_ids.size());
      for (const auto& id : admitted_ids) {
        ModelUpdate u = updates.at(id);
        if (cfg.dp) u = dp_sanitize(u, cfg.dp->clip_c, cfg.dp->sigma,
                                    derive_seed(cfg.seed, "dp", round, id));
        if (cfg.defense_clip) u = defense_clip(u, *cfg.defense_clip);
        batch.push_back(std::move(u));
      }
      server_step(cfg.algorithm, cfg, opt, model, fedavg_combine(batch));
    };
    auto run_eval = [&] {
      EvalResult ev = evaluate(model, dataset, eval_split);
      record.row.test_accuracy = ev.overall_accuracy;
      result.final_accuracy = ev.overall_accuracy;
      result.final_client_accuracy = std::move(ev.per_client);
    };

    auto handle = [&](const SimEvent& e) {
      max_event_s = std::max(max_event_s, e.at_s);
      switch (e.kind) {
        case EventKind::ClientDone: {
          if (close_set && e.at_s > close_s) return;  // straggler past close
          last_done_s = e.at_s;
          record.row.bytes_up += updates.at(e.client_id).byte_size;
          ledger += updates.at(e.client_id).byte_size;  // upload charged at completion
          if (admitted_ids.size() < N) {
            admitted_ids.push_back(e.client_id);
            if (admitted_ids.size() == N) {
              close_set = true;
              close_s = e.at_s;
              queue.push({close_s, EventKind::RoundClosed, ""});
              if (eval_due) queue.push({close_s, EventKind::EvalDue, ""});
            }
          }
          return;
        }
        case EventKind::ClientDropped:
          return;
        case EventKind::RoundClosed:
          aggregate_admitted();
          return;
        case EventKind::EvalDue:
          run_eval();
          return;
      }
    };

    while (!queue.empty()) handle(queue.pop());
    if (!close_set) {
      // Fewer than N completions: close at the last one; all-dropped rounds
      // close when the final slot expires.
      close_s = last_done_s >= 0.0 ? last_done_s : max_event_s;
      queue.push({close_s, EventKind::RoundClosed, ""});
      if (eval_due) queue.push({close_s, EventKind::EvalDue, ""});
      while (!queue.empty()) handle(queue.pop());
    }

    for (auto& outcome : record.per_client)
      outcome.admitted = std::binary_search(admitted_ids.begin(), admitted_ids.end(),
                                            outcome.client_id) &&
                         outcome.completed;

    record.row.admitted = static_cast<uint32_t>(admitted_ids.size());
    if (record.row.admitted == 0) result.stalls++;  // no-update round
    record.row.bytes_down = static_cast<uint64_t>(record.row.selected) * model_bytes;
    record.row.round_duration_s = close_s - start_s;
    clock.advance_to(close_s);
    record.row.virtual_time_s = clock.now_s;

    if (metrics_out.is_open()) {
      metrics_out << metrics_csv_row(record.row);
      metrics_out.flush();
    }
    if (timelines_out.is_open()) {
      for (const auto& outcome : record.per_client) {
        timelines_out << round << ',' << outcome.client_id << ',' << fmt_time(outcome.down_s)
                      << ',' << fmt_time(outcome.compute_s) << ',' << fmt_time(outcome.up_s)
                      << ',' << (outcome.completed ? 1 : 0) << '\n';
      }
      timelines_out.flush();
    }

    result.rows.push_back(record.row);
    result.records.push_back(std::move(record));
  }

  for (const auto& row : result.rows) result.total_bytes += row.bytes_down + row.bytes_up;
  result.total_bytes_ledger = ledger;
  result.virtual_now_s = clock.now_s;
  result.final_model = std::move(model);

  if (!opts.out_dir.empty()) {
    save_checkpoint(opts.out_dir + "/model.bin", result.final_model);
    if (opts.emit_client_acc) {
      auto out = detail::open_output(opts.out_dir + "/client_accuracy.csv");
      out << "client_id,samples,accuracy\n";
      for (const auto& [id, acc] : result.final_client_accuracy)
        out << id << ',' << dataset.clients.at(id).size() << ',' << fmt_time(acc) << '\n';
    }
  }
  return result;
}

}  // namespace fedsim
