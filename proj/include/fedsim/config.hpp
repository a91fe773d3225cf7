// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Algorithm { FedAvg, FedProx, FedYoGi };

enum class ModelKindCfg { Logistic, Mlp };

enum class DataSource { Synth, Mapping };
enum class PartitionMode { Iid, Dirichlet, Mapping };
enum class TraceSource { Synth, Files };

struct DpConfig {
  double clip_c = 1.0;  // L2 clipping norm
  double sigma = 0.0;   // noise multiplier; stddev is sigma * clip_c
};

struct FlipRuleCfg {
  enum class Kind { Rotate, FixedTarget };
  Kind kind = Kind::Rotate;
  int target = 0;  // FixedTarget only
};

// Experiment configuration. Flat `key = value` text file; dotted keys for
// algorithm parameters. Immutable after load; shared read-only.
struct ExperimentConfig {
  // Round protocol
  uint32_t target_participants = 100;  // N
  double overcommit = 1.3;
  uint32_t total_rounds = 0;  // required key
  uint32_t eval_every = 10;

  // Local training
  uint32_t local_steps = 20;  // K
  uint32_t batch_size = 32;
  double initial_lr = 0.04;
  double lr_decay = 0.98;
  uint32_t lr_decay_every = 10;

  // Aggregation algorithm
  Algorithm algorithm = Algorithm::FedAvg;  // required key
  double fedprox_mu = 0.01;
  double fedyogi_eta = 0.01;
  double fedyogi_beta1 = 0.9;
  double fedyogi_beta2 = 0.99;
  double fedyogi_tau = 1e-3;

  // Privacy / defense / attack
  std::optional<DpConfig> dp;
  std::optional<double> defense_clip;
  double corrupted_fraction = 0.0;
  FlipRuleCfg flip_rule;

  // Reproducibility
  uint64_t seed = 1;
  bool traces_enabled = true;

  // Model
  ModelKindCfg model = ModelKindCfg::Logistic;
  uint32_t mlp_hidden = 64;

  // Data
  DataSource data_source = DataSource::Synth;
  uint32_t num_classes = 10;
  uint32_t feature_dim = 32;
  uint32_t data_clients = 100;
  PartitionMode partition_mode = PartitionMode::Iid;
  double dirichlet_alpha = 0.1;
  double samples_median = 40.0;
  double samples_sigma_log = 1.0;
  double train_frac = 0.8;
  double val_frac = 0.1;
  std::string mapping_path;

  // Traces
  TraceSource trace_source = TraceSource::Synth;
  std::string profiles_path;
  std::string availability_path;
  double trace_latency_lo_ms = 5.0;
  double trace_latency_hi_ms = 50.0;
  double trace_bw_lo_kbps = 2000.0;
  double trace_bw_hi_kbps = 20000.0;
  double trace_on_mean_s = 600.0;
  double trace_off_mean_s = 1800.0;
  double trace_peak_hour = 2.0;
  double trace_horizon_s = 604800.0;

  // Engine
  double stall_probe_s = 60.0;
  uint32_t max_stalls = 100000;

  // ceil(overcommit * N), computed with a tolerance so exact products like
  // 1.3 * 10 do not round up twice.
  uint32_t request_size() const;
};

// Parsed but unvalidated key/value view of a config file.
using KeyValues = std::map<std::string, std::string>;

// Parse `key = value` lines; '#' starts a comment; blank lines ignored.
// Duplicate keys within one file are an error.
KeyValues parse_config_text(const std::string& text);

KeyValues parse_config_file(const std::string& path);

// Single "key=value" override, as given to --set.
std::pair<std::string, std::string> parse_override(const std::string& kv);

// Build a validated config. Unknown keys are an error; missing required keys
// (algorithm, total_rounds) are an error; every range violation names the key.
ExperimentConfig config_from_keys(const KeyValues& kv);

ExperimentConfig load_config(const std::string& path);

// File, then overrides applied left-to-right (overrides may repeat keys).
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides);

// initial_lr * lr_decay^floor(round / lr_decay_every)
double effective_lr(const ExperimentConfig& cfg, uint64_t round);

const char* algorithm_name(Algorithm a);

}  // namespace fedsim
