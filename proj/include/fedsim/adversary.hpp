// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/feddata.hpp"

namespace fedsim {

struct AdversarySpec {
  double corrupted_fraction = 0.0;  // in [0, 1)
  FlipRuleCfg flip_rule{};
  uint64_t seed = 0;
};

// Deterministic subset of round(fraction * |clients|) ids, drawn from the
// full population; marked clients stay corrupted for the whole experiment.
std::set<std::string> mark_corrupted(const std::vector<std::string>& client_ids,
                                     const AdversarySpec& spec);

// Training-time label-flip view; the dataset itself is never modified and
// evaluation always reads true labels.
DataView poison_view(const ClientData& data, uint32_t feature_dim, uint32_t num_classes,
                     const FlipRuleCfg& rule);

DataView clean_view(const ClientData& data, uint32_t feature_dim, uint32_t num_classes);

}  // namespace fedsim
