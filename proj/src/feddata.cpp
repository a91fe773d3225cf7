// SPDX-License-Identifier: Apache-2.0

#include "fedsim/feddata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csv_util.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/traces.hpp"

namespace fedsim {

using detail::csv_double;
using detail::csv_fail;
using detail::csv_int;
using detail::split_csv;
using detail::strip_cr;

const std::vector<std::string>& FederatedDataset::split_ids(SplitRole role) const {
  switch (role) {
    case SplitRole::Train: return train_clients;
    case SplitRole::Val: return val_clients;
    case SplitRole::Test: return test_clients;
  }
  return train_clients;
}

SynthTask make_synth_task(uint32_t num_classes, uint32_t feature_dim, uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth task: num_classes must be >= 2");
  if (feature_dim < 2) throw std::invalid_argument("synth task: feature_dim must be >= 2");
  SynthTask task;
  task.num_classes = num_classes;
  task.feature_dim = feature_dim;
  task.means.resize(static_cast<size_t>(num_classes) * feature_dim);
  Rng rng(derive_seed(seed, "taskmeans"));
  for (uint32_t c = 0; c < num_classes; ++c) {
    double* mu = task.means.data() + static_cast<size_t>(c) * feature_dim;
    double norm = 0.0;
    do {
      norm = 0.0;
      for (uint32_t d = 0; d < feature_dim; ++d) {
        mu[d] = rng.normal();
        norm += mu[d] * mu[d];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-9);
    for (uint32_t d = 0; d < feature_dim; ++d) mu[d] *= 3.0 / norm;
  }
  return task;
}

void synth_sample(const SynthTask& task, int32_t label, Rng& rng, float* out) {
  const double* mu = task.mean(static_cast<uint32_t>(label));
  for (uint32_t d = 0; d < task.feature_dim; ++d)
    out[d] = static_cast<float>(mu[d] + rng.normal());
}

namespace {

constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& in) {
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= in.size()) {
    uint32_t v = (static_cast<uint8_t>(in[i]) << 16) | (static_cast<uint8_t>(in[i + 1]) << 8) |
                 static_cast<uint8_t>(in[i + 2]);
    out.push_back(kBase64Alphabet[(v >> 18) & 63]);
    out.push_back(kBase64Alphabet[(v >> 12) & 63]);
    out.push_back(kBase64Alphabet[(v >> 6) & 63]);
    out.push_back(kBase64Alphabet[v & 63]);
    i += 3;
  }
  size_t rem = in.size() - i;
  if (rem == 1) {
    uint32_t v = static_cast<uint8_t>(in[i]) << 16;
    out.push_back(kBase64Alphabet[(v >> 18) & 63]);
    out.push_back(kBase64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rem == 2) {
    uint32_t v = (static_cast<uint8_t>(in[i]) << 16) | (static_cast<uint8_t>(in[i + 1]) << 8);
    out.push_back(kBase64Alphabet[(v >> 18) & 63]);
    out.push_back(kBase64Alphabet[(v >> 12) & 63]);
    out.push_back(kBase64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

int base64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::string base64_decode(const std::string& in) {
  if (in.size() % 4 != 0) throw std::runtime_error("base64: length not a multiple of 4");
  std::string out;
  out.reserve(in.size() / 4 * 3);
  for (size_t i = 0; i < in.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (int j = 0; j < 4; ++j) {
      char c = in[i + j];
      if (c == '=') {
        if (i + 4 != in.size() || j < 2) throw std::runtime_error("base64: misplaced padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) throw std::runtime_error("base64: data after padding");
      int x = base64_value(c);
      if (x < 0) throw std::runtime_error("base64: invalid character");
      v = (v << 6) | static_cast<uint32_t>(x);
    }
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

// %.9g round-trips every float exactly.
std::string encode_features(const float* row, uint32_t dim) {
  std::string csv;
  char buf[32];
  for (uint32_t d = 0; d < dim; ++d) {
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[d]));
    if (d) csv.push_back(',');
    csv += buf;
  }
  return base64_encode(csv);
}

int32_t draw_label(const std::vector<double>& dist, Rng& rng) {
  double u = rng.next_double();
  double acc = 0.0;
  for (size_t c = 0; c < dist.size(); ++c) {
    acc += dist[c];
    if (u < acc) return static_cast<int32_t>(c);
  }
  return static_cast<int32_t>(dist.size() - 1);
}

void assign_roles(FederatedDataset& ds, double train_frac, double val_frac, uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(ds.clients.size());
  for (const auto& [id, data] : ds.clients) {
    (void)data;
    ids.push_back(id);
  }
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(ids);
  size_t n = ids.size();
  size_t n_train = static_cast<size_t>(std::floor(train_frac * static_cast<double>(n) + 0.5));
  n_train = std::clamp<size_t>(n_train, 1, n);
  size_t n_val = static_cast<size_t>(std::floor(val_frac * static_cast<double>(n) + 0.5));
  n_val = std::min(n_val, n - n_train);
  for (size_t i = 0; i < n; ++i) {
    SplitRole role = i < n_train             ? SplitRole::Train
                     : (i < n_train + n_val) ? SplitRole::Val
                                             : SplitRole::Test;
    ds.roles[ids[i]] = role;
    if (role == SplitRole::Train) ds.train_clients.push_back(ids[i]);
    else if (role == SplitRole::Val) ds.val_clients.push_back(ids[i]);
    else ds.test_clients.push_back(ids[i]);
  }
  std::sort(ds.train_clients.begin(), ds.train_clients.end());
  std::sort(ds.val_clients.begin(), ds.val_clients.end());
  std::sort(ds.test_clients.begin(), ds.test_clients.end());
}

}  // namespace

FederatedDataset partition(const SynthTask& task, uint32_t n_clients, const PartitionSpec& spec,
                           uint64_t seed) {
  if (n_clients < 1) throw std::invalid_argument("partition: n_clients must be >= 1");
  FederatedDataset ds;
  ds.num_classes = task.num_classes;
  ds.feature_dim = task.feature_dim;

  if (spec.mode == PartitionMode::Mapping) {
    ds.clients = load_mapping(spec.mapping_path, task.num_classes, task.feature_dim);
    if (ds.clients.empty()) throw std::runtime_error("mapping file has no clients: " + spec.mapping_path);
  } else {
    std::vector<double> uniform(task.num_classes, 1.0 / task.num_classes);
    for (const auto& id : synth_client_ids(n_clients)) {
      Rng size_rng(derive_seed(seed, "size", 0, id));
      auto n = static_cast<size_t>(
          std::llround(size_rng.log_normal(spec.samples_median, spec.samples_sigma_log)));
      n = std::max<size_t>(n, 1);

      std::vector<double> dist = uniform;
      if (spec.mode == PartitionMode::Dirichlet) {
        Rng dist_rng(derive_seed(seed, "labeldist", 0, id));
        dist = dist_rng.dirichlet(spec.alpha, task.num_classes);
      }

      Rng sample_rng(derive_seed(seed, "samples", 0, id));
      ClientData data;
      data.labels.resize(n);
      data.features.resize(n * task.feature_dim);
      for (size_t i = 0; i < n; ++i) {
        int32_t y = draw_label(dist, sample_rng);
        data.labels[i] = y;
        synth_sample(task, y, sample_rng, data.features.data() + i * task.feature_dim);
      }
      ds.clients.emplace(id, std::move(data));
    }
  }

  assign_roles(ds, spec.train_frac, spec.val_frac, seed);
  return ds;
}

std::map<std::string, ClientData> load_mapping(const std::string& path, uint32_t num_classes,
                                               uint32_t feature_dim) {
  auto in = detail::open_input(path);
  std::map<std::string, ClientData> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("client_id,", 0) == 0) continue;
    auto fields = split_csv(line);
    if (fields.size() != 3) csv_fail(path, lineno, "expected 3 fields");
    if (fields[0].empty()) csv_fail(path, lineno, "empty client_id");
    long long label = csv_int(fields[1], path, lineno, "label");
    if (label < 0 || label >= static_cast<long long>(num_classes))
      csv_fail(path, lineno, "label out of range [0, " + std::to_string(num_classes) + ")");
    std::string feature_csv;
    try {
      feature_csv = base64_decode(fields[2]);
    } catch (const std::exception& e) {
      csv_fail(path, lineno, e.what());
    }
    auto values = split_csv(feature_csv);
    if (values.size() != feature_dim)
      csv_fail(path, lineno,
               "expected " + std::to_string(feature_dim) + " features, got " +
                   std::to_string(values.size()));
    auto& data = out[fields[0]];
    data.labels.push_back(static_cast<int32_t>(label));
    for (uint32_t d = 0; d < feature_dim; ++d)
      data.features.push_back(
          static_cast<float>(csv_double(values[d], path, lineno, "feature")));
  }
  return out;
}

void write_mapping_csv(const std::string& path, const FederatedDataset& ds) {
  auto out = detail::open_output(path);
  out << "client_id,label,feature_csv_base64\n";
  for (const auto& [id, data] : ds.clients) {
    for (size_t i = 0; i < data.size(); ++i) {
      out << id << ',' << data.labels[i] << ','
          << encode_features(data.features.data() + i * ds.feature_dim, ds.feature_dim) << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

double js_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_distance: dimension mismatch");
  if (p.empty()) throw std::invalid_argument("js_distance: empty input");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("js_distance: negative entry");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
    throw std::invalid_argument("js_distance: inputs must sum to 1");

  // JSD in bits; 0*log(0) taken as 0.
  double jsd = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) jsd += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) jsd += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return std::sqrt(std::clamp(jsd, 0.0, 1.0));
}

std::vector<double> label_histogram(const ClientData& data, uint32_t num_classes) {
  std::vector<double> hist(num_classes, 0.0);
  for (int32_t y : data.labels) hist[static_cast<size_t>(y)] += 1.0;
  if (!data.labels.empty())
    for (double& h : hist) h /= static_cast<double>(data.labels.size());
  return hist;
}

HeterogeneityReport heterogeneity_report(const FederatedDataset& ds) {
  if (ds.clients.size() < 2)
    throw std::invalid_argument("heterogeneity_report: need >= 2 clients");
  constexpr size_t kPairCap = 10000;

  HeterogeneityReport report;
  std::vector<std::vector<double>> hists;
  hists.reserve(ds.clients.size());
  for (const auto& [id, data] : ds.clients) {
    report.client_sizes.emplace_back(id, data.size());
    report.total_samples += data.size();
    hists.push_back(label_histogram(data, ds.num_classes));
  }

  size_t m = hists.size();
  size_t total_pairs = m * (m - 1) / 2;
  if (total_pairs <= kPairCap) {
    for (size_t i = 0; i < m; ++i)
      for (size_t j = i + 1; j < m; ++j)
        report.pairwise_js.push_back(js_distance(hists[i], hists[j]));
  } else {
    Rng rng(derive_seed(0, "hetreport"));
    for (size_t k = 0; k < kPairCap; ++k) {
      size_t i = rng.bounded(m);
      size_t j = rng.bounded(m - 1);
      if (j >= i) ++j;
      report.pairwise_js.push_back(js_distance(hists[i], hists[j]));
    }
  }

  double sum = 0.0;
  for (double d : report.pairwise_js) sum += d;
  report.mean_js = report.pairwise_js.empty()
                       ? 0.0
                       : sum / static_cast<double>(report.pairwise_js.size());
  return report;
}

void write_heterogeneity_csv(const std::string& path, const HeterogeneityReport& report) {
  auto out = detail::open_output(path);
  out << "metric,value\n";
  out << "clients," << report.client_sizes.size() << '\n';
  out << "total_samples," << report.total_samples << '\n';
  out << "pairs_sampled," << report.pairwise_js.size() << '\n';
  out << "mean_pairwise_js," << detail::fmt_g9(report.mean_js) << '\n';

  size_t min_size = report.client_sizes.empty() ? 0 : report.client_sizes[0].second;
  size_t max_size = min_size;
  for (const auto& [id, n] : report.client_sizes) {
    (void)id;
    min_size = std::min(min_size, n);
    max_size = std::max(max_size, n);
  }
  out << "min_client_size," << min_size << '\n';
  out << "max_client_size," << max_size << '\n';

  for (const auto& [id, n] : report.client_sizes) out << "client_size," << id << ',' << n << '\n';

  // 20-bucket histogram of pairwise distances over [0, 1].
  constexpr size_t kBuckets = 20;
  size_t counts[kBuckets] = {};
  for (double d : report.pairwise_js) {
    auto b = static_cast<size_t>(d * kBuckets);
    counts[std::min(b, kBuckets - 1)]++;
  }
  for (size_t b = 0; b < kBuckets; ++b)
    out << "js_hist," << detail::fmt_g9(static_cast<double>(b) / kBuckets) << ',' << counts[b]
        << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace fedsim
