// SPDX-License-Identifier: Apache-2.0

#include "fedsim/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim {

std::set<std::string> mark_corrupted(const std::vector<std::string>& client_ids,
                                     const AdversarySpec& spec) {
  if (!(spec.corrupted_fraction >= 0.0 && spec.corrupted_fraction < 1.0))
    throw std::invalid_argument("mark_corrupted: fraction must be in [0, 1)");
  std::set<std::string> out;
  auto k = static_cast<size_t>(
      std::llround(spec.corrupted_fraction * static_cast<double>(client_ids.size())));
  if (k == 0) return out;

  // Sorted copy so the draw does not depend on caller ordering.
  std::vector<std::string> ids = client_ids;
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(spec.seed, "adversary"));
  for (size_t pick : rng.sample_without_replacement(ids.size(), k)) out.insert(ids[pick]);
  return out;
}

DataView poison_view(const ClientData& data, uint32_t feature_dim, uint32_t num_classes,
                     const FlipRuleCfg& rule) {
  if (rule.kind == FlipRuleCfg::Kind::FixedTarget &&
      (rule.target < 0 || rule.target >= static_cast<int>(num_classes)))
    throw std::invalid_argument("poison_view: fixed target out of range");
  DataView view = clean_view(data, feature_dim, num_classes);
  view.flip = true;
  view.rule = rule;
  return view;
}

DataView clean_view(const ClientData& data, uint32_t feature_dim, uint32_t num_classes) {
  DataView view;
  view.data = &data;
  view.feature_dim = feature_dim;
  view.num_classes = num_classes;
  return view;
}

}  // namespace fedsim
