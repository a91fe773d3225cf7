// SPDX-License-Identifier: Apache-2.0

#include "fedsim/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csv_util.hpp"
#include "fedsim/engine.hpp"

namespace fedsim {

namespace {

std::pair<std::string, uint16_t> parse_host_port(const std::string& s) {
  size_t colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    throw std::runtime_error("expected host:port, got '" + s + "'");
  int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::runtime_error("port out of range in '" + s + "'");
  return {s.substr(0, colon), static_cast<uint16_t>(port)};
}

ExperimentConfig load_config_with_env(const std::string& path,
                                      const std::vector<std::string>& sets) {
  KeyValues kv = parse_config_file(path);
  // FEDSIM_SEED is the weakest seed source: config file and --set win.
  if (!kv.count("seed")) {
    if (const char* env = std::getenv("FEDSIM_SEED")) kv["seed"] = env;
  }
  for (const auto& s : sets) {
    auto [key, value] = parse_override(s);
    kv[key] = value;
  }
  return config_from_keys(kv);
}

int run_command(const std::string& config_path, const std::vector<std::string>& sets,
                const std::string& out_dir, size_t workers, const std::string& connect,
                bool emit_timelines, bool emit_client_acc) {
  ExperimentConfig cfg = load_config_with_env(config_path, sets);

  RunOptions opts;
  opts.out_dir = out_dir;
  opts.emit_timelines = emit_timelines;
  opts.emit_client_acc = emit_client_acc;
  opts.workers = workers;

  std::unique_ptr<SocketDispatcher> remote;
  if (!connect.empty()) {
    auto [host, port] = parse_host_port(connect);
    std::fprintf(stderr, "waiting for %zu worker(s) on %s:%u...\n", workers, host.c_str(),
                 static_cast<unsigned>(port));
    remote = std::make_unique<SocketDispatcher>(host, port, workers);
    opts.dispatcher = remote.get();
  }

  RunResult result = run_experiment(cfg, opts);

  if (std::isnan(result.final_accuracy)) std::printf("final_accuracy n/a\n");
  else std::printf("final_accuracy %.6f\n", result.final_accuracy);
  std::printf("virtual_hours %.6f\n", result.virtual_now_s / 3600.0);
  std::printf("total_gb %.6f\n", static_cast<double>(result.total_bytes) / 1e9);
  if (result.stalls > 0) std::printf("stalls %u\n", result.stalls);
  if (result.total_bytes != result.total_bytes_ledger) {
    std::fprintf(stderr, "byte accounting mismatch: rows %llu ledger %llu\n",
                 static_cast<unsigned long long>(result.total_bytes),
                 static_cast<unsigned long long>(result.total_bytes_ledger));
    return 1;
  }
  return 0;
}

int synth_traces_command(uint32_t n, uint64_t seed, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  TraceSet set = synth_traces(n, seed);
  write_profiles_csv(out_dir + "/profiles.csv", set.profiles);
  write_availability_csv(out_dir + "/availability.csv", set.availability);
  std::printf("wrote %s/profiles.csv and %s/availability.csv\n", out_dir.c_str(),
              out_dir.c_str());
  return 0;
}

int synth_data_command(uint32_t clients, uint32_t classes, uint32_t dim, const std::string& mode,
                       double alpha, uint64_t seed, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  SynthTask task = make_synth_task(classes, dim, seed);
  PartitionSpec spec;
  if (mode == "iid") spec.mode = PartitionMode::Iid;
  else if (mode == "dirichlet") spec.mode = PartitionMode::Dirichlet;
  else throw std::runtime_error("synth data: mode must be iid|dirichlet");
  spec.alpha = alpha;
  FederatedDataset ds = partition(task, clients, spec, seed);
  write_mapping_csv(out_dir + "/mapping.csv", ds);
  std::printf("wrote %s/mapping.csv\n", out_dir.c_str());
  return 0;
}

int report_data_command(const std::string& mapping, uint32_t classes, uint32_t dim,
                        const std::string& out_path) {
  FederatedDataset ds;
  ds.num_classes = classes;
  ds.feature_dim = dim;
  ds.clients = load_mapping(mapping, classes, dim);
  HeterogeneityReport report = heterogeneity_report(ds);
  write_heterogeneity_csv(out_path, report);
  std::printf("clients %zu mean_pairwise_js %.6f\n", report.client_sizes.size(), report.mean_js);
  return 0;
}

struct TimelineRow {
  uint32_t round;
  double total_s;
  bool completed;
};

// Per-round ratio of the round duration (the admitting completion) to the
// median completion time among the round's finished clients.
int report_stragglers_command(const std::string& metrics_path, const std::string& timelines_path,
                              const std::string& out_path) {
  std::map<uint32_t, double> durations;
  {
    auto in = detail::open_input(metrics_path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = detail::strip_cr(line);
      if (line.empty() || (lineno == 1 && line.rfind("round,", 0) == 0)) continue;
      auto f = detail::split_csv(line);
      if (f.size() < 6) detail::csv_fail(metrics_path, lineno, "short row");
      durations[static_cast<uint32_t>(detail::csv_int(f[0], metrics_path, lineno, "round"))] =
          detail::csv_double(f[5], metrics_path, lineno, "round_duration_s");
    }
  }

  std::map<uint32_t, std::vector<double>> completions;
  {
    auto in = detail::open_input(timelines_path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = detail::strip_cr(line);
      if (line.empty() || (lineno == 1 && line.rfind("round,", 0) == 0)) continue;
      auto f = detail::split_csv(line);
      if (f.size() != 6) detail::csv_fail(timelines_path, lineno, "expected 6 fields");
      if (f[5] != "1") continue;
      auto round = static_cast<uint32_t>(detail::csv_int(f[0], timelines_path, lineno, "round"));
      double total = detail::csv_double(f[2], timelines_path, lineno, "down_s") +
                     detail::csv_double(f[3], timelines_path, lineno, "compute_s") +
                     detail::csv_double(f[4], timelines_path, lineno, "up_s");
      completions[round].push_back(total);
    }
  }

  auto out = detail::open_output(out_path);
  out << "round,straggler_ratio\n";
  double sum = 0.0;
  size_t count = 0;
  for (auto& [round, totals] : completions) {
    auto it = durations.find(round);
    if (it == durations.end() || totals.empty()) continue;
    std::sort(totals.begin(), totals.end());
    double median = totals.size() % 2 == 1
                        ? totals[totals.size() / 2]
                        : 0.5 * (totals[totals.size() / 2 - 1] + totals[totals.size() / 2]);
    if (median <= 0.0) continue;
    double ratio = it->second / median;
    out << round << ',' << detail::fmt_g9(ratio) << '\n';
    sum += ratio;
    ++count;
  }
  if (count == 0) throw std::runtime_error("no completed rounds to report");
  std::printf("rounds %zu mean_straggler_ratio %.6f\n", count, sum / static_cast<double>(count));
  return 0;
}

int report_accuracy_command(const std::string& acc_path, const std::string& out_path) {
  auto in = detail::open_input(acc_path);
  std::string line;
  size_t lineno = 0;
  std::vector<double> accs;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty() || (lineno == 1 && line.rfind("client_id,", 0) == 0)) continue;
    auto f = detail::split_csv(line);
    if (f.size() != 3) detail::csv_fail(acc_path, lineno, "expected 3 fields");
    accs.push_back(detail::csv_double(f[2], acc_path, lineno, "accuracy"));
  }
  if (accs.empty()) throw std::runtime_error("no per-client accuracies in " + acc_path);

  constexpr size_t kBuckets = 20;
  size_t counts[kBuckets] = {};
  double sum = 0.0;
  for (double a : accs) {
    auto b = static_cast<size_t>(a * kBuckets);
    counts[std::min(b, kBuckets - 1)]++;
    sum += a;
  }
  auto out = detail::open_output(out_path);
  out << "bucket_lo,count\n";
  for (size_t b = 0; b < kBuckets; ++b)
    out << detail::fmt_g9(static_cast<double>(b) / kBuckets) << ',' << counts[b] << '\n';
  std::printf("clients %zu mean_accuracy %.6f\n", accs.size(),
              sum / static_cast<double>(accs.size()));
  return 0;
}

}  // namespace

int cmd_worker(const std::string& connect, const std::string& config_path,
               const std::vector<std::string>& overrides) {
  try {
    ExperimentConfig cfg = load_config_with_env(config_path, overrides);
    FederatedDataset dataset = build_dataset(cfg);
    TaskFn runner = make_task_runner(cfg, dataset);
    auto [host, port] = parse_host_port(connect);
    return run_worker(host, port, runner);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Trace-driven federated learning simulator"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string config_path, out_dir, connect;
  std::vector<std::string> sets;
  size_t workers = 1;
  bool emit_timelines = false, emit_client_acc = false;
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--set", sets, "Override config key (key=value, repeatable)");
  run->add_option("--out", out_dir, "Output directory for metric files")->required();
  run->add_option("--workers", workers, "Worker pool size (threads, or remote workers)");
  run->add_option("--connect", connect,
                  "Listen at host:port and dispatch to remote fedsim-worker processes");
  run->add_flag("--emit-timelines", emit_timelines, "Write per-client timeline CSV");
  run->add_flag("--emit-client-acc", emit_client_acc, "Write per-client accuracy CSV");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic traces or data");
  synth->require_subcommand(1);
  auto* synth_traces_cmd = synth->add_subcommand("traces", "Generate profile/availability CSVs");
  uint32_t trace_n = 100;
  uint64_t trace_seed = 1;
  std::string trace_out = ".";
  synth_traces_cmd->add_option("--n", trace_n, "Number of clients")->required();
  synth_traces_cmd->add_option("--seed", trace_seed, "Generator seed");
  synth_traces_cmd->add_option("--out", trace_out, "Output directory");

  auto* synth_data_cmd = synth->add_subcommand("data", "Generate a mapping-format dataset");
  uint32_t data_clients = 100, data_classes = 10, data_dim = 32;
  std::string data_mode = "dirichlet";
  double data_alpha = 0.1;
  uint64_t data_seed = 1;
  std::string data_out = ".";
  synth_data_cmd->add_option("--clients", data_clients, "Number of clients")->required();
  synth_data_cmd->add_option("--classes", data_classes, "Number of classes");
  synth_data_cmd->add_option("--dim", data_dim, "Feature dimension");
  synth_data_cmd->add_option("--mode", data_mode, "iid or dirichlet");
  synth_data_cmd->add_option("--alpha", data_alpha, "Dirichlet concentration");
  synth_data_cmd->add_option("--seed", data_seed, "Generator seed");
  synth_data_cmd->add_option("--out", data_out, "Output directory");

  // report
  auto* report = app.add_subcommand("report", "Analyze datasets or run outputs");
  report->require_subcommand(1);
  auto* report_data = report->add_subcommand("data", "Heterogeneity report from a mapping file");
  std::string rd_mapping, rd_out = "heterogeneity.csv";
  uint32_t rd_classes = 10, rd_dim = 32;
  report_data->add_option("--mapping", rd_mapping, "Mapping CSV path")->required();
  report_data->add_option("--classes", rd_classes, "Number of classes");
  report_data->add_option("--dim", rd_dim, "Feature dimension");
  report_data->add_option("--out", rd_out, "Output CSV path");

  auto* report_stragglers =
      report->add_subcommand("stragglers", "Per-round straggler ratios from run outputs");
  std::string rs_metrics, rs_timelines, rs_out = "stragglers.csv";
  report_stragglers->add_option("--metrics", rs_metrics, "metrics.csv path")->required();
  report_stragglers->add_option("--timelines", rs_timelines, "timelines.csv path")->required();
  report_stragglers->add_option("--out", rs_out, "Output CSV path");

  auto* report_accuracy =
      report->add_subcommand("accuracy", "Accuracy-bias histogram from client_accuracy.csv");
  std::string ra_acc, ra_out = "accuracy_hist.csv";
  report_accuracy->add_option("--client-acc", ra_acc, "client_accuracy.csv path")->required();
  report_accuracy->add_option("--out", ra_out, "Output CSV path");

  // worker
  auto* worker = app.add_subcommand("worker", "Serve training tasks to a remote engine");
  std::string w_connect, w_config;
  std::vector<std::string> w_sets;
  worker->add_option("--connect", w_connect, "Engine address host:port")->required();
  worker->add_option("--config", w_config, "Experiment config (rebuilds the dataset)")
      ->required();
  worker->add_option("--set", w_sets, "Override config key (key=value, repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run)
      return run_command(config_path, sets, out_dir, workers, connect, emit_timelines,
                         emit_client_acc);
    if (*synth_traces_cmd) return synth_traces_command(trace_n, trace_seed, trace_out);
    if (*synth_data_cmd)
      return synth_data_command(data_clients, data_classes, data_dim, data_mode, data_alpha,
                                data_seed, data_out);
    if (*report_data) return report_data_command(rd_mapping, rd_classes, rd_dim, rd_out);
    if (*report_stragglers)
      return report_stragglers_command(rs_metrics, rs_timelines, rs_out);
    if (*report_accuracy) return report_accuracy_command(ra_acc, ra_out);
    if (*worker) return cmd_worker(w_connect, w_config, w_sets);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace fedsim
