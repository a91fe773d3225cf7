// SPDX-License-Identifier: Apache-2.0

#include "fedsim/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace fedsim {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

class KeyReader {
 public:
  explicit KeyReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return kv_.count(key) > 0;
  }

  std::string str(const std::string& key, const std::string& def) {
    seen_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  double real(const std::string& key, double def) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      fail("config key '" + key + "': not a number: '" + v + "'");
    return x;
  }

  int64_t integer(const std::string& key, int64_t def) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    char* end = nullptr;
    long long x = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      fail("config key '" + key + "': not an integer: '" + v + "'");
    return static_cast<int64_t>(x);
  }

  uint64_t uinteger(const std::string& key, uint64_t def) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    const std::string& v = it->second;
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      fail("config key '" + key + "': not an unsigned integer: '" + v + "'");
    return static_cast<uint64_t>(x);
  }

  bool boolean(const std::string& key, bool def) {
    seen_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail("config key '" + key + "': not a boolean: '" + it->second + "'");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      (void)value;
      if (!seen_.count(key)) fail("unknown config key '" + key + "'");
    }
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> seen_;
};

void require_positive(double x, const std::string& key) {
  if (!(x > 0.0)) fail("config key '" + key + "': must be > 0, got " + std::to_string(x));
}

void require_positive_int(int64_t x, const std::string& key) {
  if (x <= 0) fail("config key '" + key + "': must be a positive integer, got " + std::to_string(x));
}

}  // namespace

uint32_t ExperimentConfig::request_size() const {
  double raw = overcommit * static_cast<double>(target_participants);
  auto req = static_cast<uint32_t>(std::ceil(raw - 1e-9));
  return std::max(req, target_participants);
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail("config parse error at line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      fail("config parse error at line " + std::to_string(lineno) + ": empty key");
    if (out.count(key))
      fail("config parse error at line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

KeyValues parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::pair<std::string, std::string> parse_override(const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    fail("bad --set override (expected key=value): '" + kv + "'");
  std::string key = trim(kv.substr(0, eq));
  std::string value = trim(kv.substr(eq + 1));
  if (key.empty()) fail("bad --set override (empty key): '" + kv + "'");
  return {key, value};
}

ExperimentConfig config_from_keys(const KeyValues& kv) {
  KeyReader r(kv);
  ExperimentConfig c;

  if (!r.has("algorithm")) fail("missing required config key 'algorithm'");
  if (!r.has("total_rounds")) fail("missing required config key 'total_rounds'");

  {
    std::string a = r.str("algorithm", "");
    std::transform(a.begin(), a.end(), a.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (a == "fedavg") c.algorithm = Algorithm::FedAvg;
    else if (a == "fedprox") c.algorithm = Algorithm::FedProx;
    else if (a == "fedyogi") c.algorithm = Algorithm::FedYoGi;
    else fail("config key 'algorithm': expected fedavg|fedprox|fedyogi, got '" + a + "'");
  }

  int64_t rounds = r.integer("total_rounds", 0);
  if (rounds < 0) fail("config key 'total_rounds': must be >= 0");
  c.total_rounds = static_cast<uint32_t>(rounds);

  int64_t n = r.integer("target_participants", c.target_participants);
  require_positive_int(n, "target_participants");
  c.target_participants = static_cast<uint32_t>(n);

  c.overcommit = r.real("overcommit", c.overcommit);
  if (!(c.overcommit >= 1.0)) fail("config key 'overcommit': must be >= 1");

  int64_t ev = r.integer("eval_every", c.eval_every);
  require_positive_int(ev, "eval_every");
  c.eval_every = static_cast<uint32_t>(ev);

  int64_t k = r.integer("local_steps", c.local_steps);
  require_positive_int(k, "local_steps");
  c.local_steps = static_cast<uint32_t>(k);

  int64_t b = r.integer("batch_size", c.batch_size);
  require_positive_int(b, "batch_size");
  c.batch_size = static_cast<uint32_t>(b);

  c.initial_lr = r.real("initial_lr", c.initial_lr);
  require_positive(c.initial_lr, "initial_lr");

  c.lr_decay = r.real("lr_decay", c.lr_decay);
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0))
    fail("config key 'lr_decay': must be in (0, 1], got " + std::to_string(c.lr_decay));

  int64_t de = r.integer("lr_decay_every", c.lr_decay_every);
  require_positive_int(de, "lr_decay_every");
  c.lr_decay_every = static_cast<uint32_t>(de);

  c.fedprox_mu = r.real("fedprox.mu", c.fedprox_mu);
  if (c.fedprox_mu < 0.0) fail("config key 'fedprox.mu': must be >= 0");

  c.fedyogi_eta = r.real("fedyogi.eta", c.fedyogi_eta);
  require_positive(c.fedyogi_eta, "fedyogi.eta");
  c.fedyogi_beta1 = r.real("fedyogi.beta1", c.fedyogi_beta1);
  if (!(c.fedyogi_beta1 >= 0.0 && c.fedyogi_beta1 < 1.0)) fail("config key 'fedyogi.beta1': must be in [0, 1)");
  c.fedyogi_beta2 = r.real("fedyogi.beta2", c.fedyogi_beta2);
  if (!(c.fedyogi_beta2 >= 0.0 && c.fedyogi_beta2 < 1.0)) fail("config key 'fedyogi.beta2': must be in [0, 1)");
  c.fedyogi_tau = r.real("fedyogi.tau", c.fedyogi_tau);
  require_positive(c.fedyogi_tau, "fedyogi.tau");

  if (r.has("dp.clip") || r.has("dp.sigma")) {
    if (!r.has("dp.clip")) fail("config key 'dp.sigma' requires 'dp.clip'");
    DpConfig dp;
    dp.clip_c = r.real("dp.clip", 1.0);
    require_positive(dp.clip_c, "dp.clip");
    dp.sigma = r.real("dp.sigma", 0.0);
    if (dp.sigma < 0.0) fail("config key 'dp.sigma': must be >= 0");
    c.dp = dp;
  }

  if (r.has("defense.clip")) {
    double bound = r.real("defense.clip", 1.0);
    require_positive(bound, "defense.clip");
    c.defense_clip = bound;
  }

  c.corrupted_fraction = r.real("adversary.fraction", c.corrupted_fraction);
  if (!(c.corrupted_fraction >= 0.0 && c.corrupted_fraction < 1.0))
    fail("config key 'adversary.fraction': must be in [0, 1)");

  {
    std::string rule = r.str("adversary.rule", "rotate");
    if (rule == "rotate") {
      c.flip_rule.kind = FlipRuleCfg::Kind::Rotate;
    } else if (rule.rfind("fixed:", 0) == 0) {
      c.flip_rule.kind = FlipRuleCfg::Kind::FixedTarget;
      char* end = nullptr;
      long t = std::strtol(rule.c_str() + 6, &end, 10);
      if (end == rule.c_str() + 6 || *end != '\0' || t < 0)
        fail("config key 'adversary.rule': bad fixed target in '" + rule + "'");
      c.flip_rule.target = static_cast<int>(t);
    } else {
      fail("config key 'adversary.rule': expected rotate|fixed:<t>, got '" + rule + "'");
    }
  }

  c.seed = r.uinteger("seed", c.seed);
  c.traces_enabled = r.boolean("traces_enabled", c.traces_enabled);

  {
    std::string m = r.str("model", "logistic");
    if (m == "logistic") c.model = ModelKindCfg::Logistic;
    else if (m == "mlp") c.model = ModelKindCfg::Mlp;
    else fail("config key 'model': expected logistic|mlp, got '" + m + "'");
  }
  int64_t hidden = r.integer("mlp.hidden", c.mlp_hidden);
  require_positive_int(hidden, "mlp.hidden");
  c.mlp_hidden = static_cast<uint32_t>(hidden);

  {
    std::string s = r.str("data.source", "synth");
    if (s == "synth") c.data_source = DataSource::Synth;
    else if (s == "mapping") c.data_source = DataSource::Mapping;
    else fail("config key 'data.source': expected synth|mapping, got '" + s + "'");
  }
  int64_t classes = r.integer("data.num_classes", c.num_classes);
  if (classes < 2) fail("config key 'data.num_classes': must be >= 2");
  c.num_classes = static_cast<uint32_t>(classes);
  int64_t dim = r.integer("data.feature_dim", c.feature_dim);
  if (dim < 2) fail("config key 'data.feature_dim': must be >= 2");
  c.feature_dim = static_cast<uint32_t>(dim);
  int64_t dc = r.integer("data.clients", c.data_clients);
  require_positive_int(dc, "data.clients");
  c.data_clients = static_cast<uint32_t>(dc);

  {
    std::string p = r.str("data.partition", "iid");
    if (p == "iid") c.partition_mode = PartitionMode::Iid;
    else if (p == "dirichlet") c.partition_mode = PartitionMode::Dirichlet;
    else if (p == "mapping") c.partition_mode = PartitionMode::Mapping;
    else fail("config key 'data.partition': expected iid|dirichlet|mapping, got '" + p + "'");
  }
  c.dirichlet_alpha = r.real("data.alpha", c.dirichlet_alpha);
  require_positive(c.dirichlet_alpha, "data.alpha");
  c.samples_median = r.real("data.samples_median", c.samples_median);
  require_positive(c.samples_median, "data.samples_median");
  c.samples_sigma_log = r.real("data.samples_sigma_log", c.samples_sigma_log);
  if (c.samples_sigma_log < 0.0) fail("config key 'data.samples_sigma_log': must be >= 0");
  c.train_frac = r.real("data.train_frac", c.train_frac);
  c.val_frac = r.real("data.val_frac", c.val_frac);
  if (!(c.train_frac > 0.0 && c.train_frac <= 1.0)) fail("config key 'data.train_frac': must be in (0, 1]");
  if (!(c.val_frac >= 0.0 && c.train_frac + c.val_frac <= 1.0))
    fail("config key 'data.val_frac': train_frac + val_frac must be <= 1");
  c.mapping_path = r.str("data.mapping_path", "");
  if (c.partition_mode == PartitionMode::Mapping && c.mapping_path.empty())
    fail("config key 'data.mapping_path': required when data.partition = mapping");
  if (c.data_source == DataSource::Mapping && c.mapping_path.empty())
    fail("config key 'data.mapping_path': required when data.source = mapping");

  {
    std::string s = r.str("traces.source", "synth");
    if (s == "synth") c.trace_source = TraceSource::Synth;
    else if (s == "files") c.trace_source = TraceSource::Files;
    else fail("config key 'traces.source': expected synth|files, got '" + s + "'");
  }
  c.profiles_path = r.str("traces.profiles_path", "");
  c.availability_path = r.str("traces.availability_path", "");
  if (c.traces_enabled && c.trace_source == TraceSource::Files) {
    if (c.profiles_path.empty()) fail("config key 'traces.profiles_path': required when traces.source = files");
    if (c.availability_path.empty())
      fail("config key 'traces.availability_path': required when traces.source = files");
  }
  c.trace_latency_lo_ms = r.real("traces.latency_lo_ms", c.trace_latency_lo_ms);
  c.trace_latency_hi_ms = r.real("traces.latency_hi_ms", c.trace_latency_hi_ms);
  require_positive(c.trace_latency_lo_ms, "traces.latency_lo_ms");
  if (!(c.trace_latency_hi_ms >= c.trace_latency_lo_ms))
    fail("config key 'traces.latency_hi_ms': must be >= traces.latency_lo_ms");
  c.trace_bw_lo_kbps = r.real("traces.bw_lo_kbps", c.trace_bw_lo_kbps);
  c.trace_bw_hi_kbps = r.real("traces.bw_hi_kbps", c.trace_bw_hi_kbps);
  require_positive(c.trace_bw_lo_kbps, "traces.bw_lo_kbps");
  if (!(c.trace_bw_hi_kbps >= c.trace_bw_lo_kbps))
    fail("config key 'traces.bw_hi_kbps': must be >= traces.bw_lo_kbps");
  c.trace_on_mean_s = r.real("traces.on_mean_s", c.trace_on_mean_s);
  require_positive(c.trace_on_mean_s, "traces.on_mean_s");
  c.trace_off_mean_s = r.real("traces.off_mean_s", c.trace_off_mean_s);
  require_positive(c.trace_off_mean_s, "traces.off_mean_s");
  c.trace_peak_hour = r.real("traces.peak_hour", c.trace_peak_hour);
  if (!(c.trace_peak_hour >= 0.0 && c.trace_peak_hour < 24.0))
    fail("config key 'traces.peak_hour': must be in [0, 24)");
  c.trace_horizon_s = r.real("traces.horizon_s", c.trace_horizon_s);
  require_positive(c.trace_horizon_s, "traces.horizon_s");

  c.stall_probe_s = r.real("engine.stall_probe_s", c.stall_probe_s);
  require_positive(c.stall_probe_s, "engine.stall_probe_s");
  int64_t ms = r.integer("engine.max_stalls", c.max_stalls);
  require_positive_int(ms, "engine.max_stalls");
  c.max_stalls = static_cast<uint32_t>(ms);

  if (c.flip_rule.kind == FlipRuleCfg::Kind::FixedTarget &&
      c.flip_rule.target >= static_cast<int>(c.num_classes))
    fail("config key 'adversary.rule': fixed target " + std::to_string(c.flip_rule.target) +
         " is outside the " + std::to_string(c.num_classes) + "-class label range");

  r.reject_unknown();
  return c;
}

ExperimentConfig load_config(const std::string& path) { return load_config(path, {}); }

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  KeyValues kv = parse_config_file(path);
  for (const auto& [key, value] : overrides) kv[key] = value;
  return config_from_keys(kv);
}

double effective_lr(const ExperimentConfig& cfg, uint64_t round) {
  double steps = std::floor(static_cast<double>(round) / static_cast<double>(cfg.lr_decay_every));
  return cfg.initial_lr * std::pow(cfg.lr_decay, steps);
}

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedProx: return "fedprox";
    case Algorithm::FedYoGi: return "fedyogi";
  }
  return "?";
}

}  // namespace fedsim
