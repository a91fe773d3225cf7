// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedsim/config.hpp"

namespace fedsim {

// One client's samples, row-major features.
struct ClientData {
  std::vector<float> features;  // size() * feature_dim
  std::vector<int32_t> labels;
  size_t size() const { return labels.size(); }
};

enum class SplitRole { Train, Val, Test };

struct FederatedDataset {
  uint32_t num_classes = 0;
  uint32_t feature_dim = 0;
  std::map<std::string, ClientData> clients;
  std::map<std::string, SplitRole> roles;
  // Sorted id lists per role; a client appears in exactly one.
  std::vector<std::string> train_clients;
  std::vector<std::string> val_clients;
  std::vector<std::string> test_clients;

  const std::vector<std::string>& split_ids(SplitRole role) const;
};

// Read-only view over one client's samples with an optional training-time
// label flip. The underlying data is never modified.
struct DataView {
  const ClientData* data = nullptr;
  uint32_t feature_dim = 0;
  uint32_t num_classes = 0;
  bool flip = false;
  FlipRuleCfg rule{};

  size_t size() const { return data->labels.size(); }
  const float* row(size_t i) const { return data->features.data() + i * feature_dim; }
  int32_t label(size_t i) const {
    int32_t y = data->labels[i];
    if (!flip) return y;
    if (rule.kind == FlipRuleCfg::Kind::Rotate)
      return (y + 1) % static_cast<int32_t>(num_classes);
    return rule.target;
  }
};

// Class-conditional Gaussian task: per-class unit-covariance Gaussians whose
// means are drawn uniformly on a sphere of radius 3.
struct SynthTask {
  uint32_t num_classes = 0;
  uint32_t feature_dim = 0;
  std::vector<double> means;  // num_classes * feature_dim, row-major

  const double* mean(uint32_t cls) const { return means.data() + cls * feature_dim; }
};

SynthTask make_synth_task(uint32_t num_classes, uint32_t feature_dim, uint64_t seed);

class Rng;

// Draws x ~ N(mean[y], I) into out (length feature_dim).
void synth_sample(const SynthTask& task, int32_t label, Rng& rng, float* out);

struct PartitionSpec {
  PartitionMode mode = PartitionMode::Iid;
  double alpha = 0.1;            // Dirichlet only
  std::string mapping_path;      // Mapping only
  double samples_median = 40.0;  // log-normal client sizes
  double samples_sigma_log = 1.0;
  double train_frac = 0.8;
  double val_frac = 0.1;
};

// Iid: every client samples labels from the uniform prior. Dirichlet: each
// client's label distribution ~ Dir(alpha * 1). Mapping: samples read from
// file. Split is by client, never by sample.
FederatedDataset partition(const SynthTask& task, uint32_t n_clients, const PartitionSpec& spec,
                           uint64_t seed);

// Mapping CSV: client_id,label,feature_csv_base64 where the last field is the
// base64 of the sample's comma-separated feature values.
std::map<std::string, ClientData> load_mapping(const std::string& path, uint32_t num_classes,
                                               uint32_t feature_dim);
void write_mapping_csv(const std::string& path, const FederatedDataset& ds);

// sqrt of the base-2 Jensen-Shannon divergence; range [0, 1].
double js_distance(const std::vector<double>& p, const std::vector<double>& q);

std::vector<double> label_histogram(const ClientData& data, uint32_t num_classes);

struct HeterogeneityReport {
  std::vector<std::pair<std::string, size_t>> client_sizes;  // sorted by id
  std::vector<double> pairwise_js;  // capped random sample of client pairs
  double mean_js = 0.0;
  size_t total_samples = 0;
};

// Pairwise distances over at most 10,000 client pairs (seeded subsample past
// the cap).
HeterogeneityReport heterogeneity_report(const FederatedDataset& ds);

void write_heterogeneity_csv(const std::string& path, const HeterogeneityReport& report);

}  // namespace fedsim
