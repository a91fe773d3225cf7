// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedsim/adversary.hpp"

using namespace fedsim;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("c" + std::to_string(100 + i));
  return out;
}

ClientData sample_data() {
  ClientData d;
  d.labels = {0, 1, 2, 3, 4};
  d.features.assign(5 * 2, 0.5f);
  return d;
}

}  // namespace

TEST_SUITE("adversary") {

TEST_CASE("mark_corrupted picks round(fraction * n) clients deterministically") {
  AdversarySpec spec;
  spec.corrupted_fraction = 0.2;
  spec.seed = 3;
  auto marked = mark_corrupted(ids(10), spec);
  CHECK(marked.size() == 2);
  for (const auto& id : marked) CHECK(id.rfind("c1", 0) == 0);
  CHECK(mark_corrupted(ids(10), spec) == marked);

  spec.seed = 4;
  auto other = mark_corrupted(ids(10), spec);
  CHECK(other.size() == 2);

  spec.corrupted_fraction = 0.5;
  CHECK(mark_corrupted(ids(3), spec).size() == 2);  // round(1.5)
}

TEST_CASE("fraction extremes") {
  AdversarySpec spec;
  spec.corrupted_fraction = 0.0;
  CHECK(mark_corrupted(ids(10), spec).empty());
  spec.corrupted_fraction = 0.999999;
  CHECK(mark_corrupted(ids(10), spec).size() == 10);
}

TEST_CASE("marking ignores id order") {
  AdversarySpec spec;
  spec.corrupted_fraction = 0.3;
  spec.seed = 9;
  auto forward = ids(10);
  auto reversed = forward;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(mark_corrupted(forward, spec) == mark_corrupted(reversed, spec));
}

TEST_CASE("rotate flips labels one class up, wrapping") {
  auto data = sample_data();
  FlipRuleCfg rule;
  rule.kind = FlipRuleCfg::Kind::Rotate;
  auto view = poison_view(data, 2, 5, rule);
  REQUIRE(view.size() == 5);
  CHECK(view.label(0) == 1);
  CHECK(view.label(3) == 4);
  CHECK(view.label(4) == 0);  // wraps
  // Underlying data untouched.
  CHECK(data.labels[4] == 4);
}

TEST_CASE("fixed target rewrites every label") {
  auto data = sample_data();
  FlipRuleCfg rule;
  rule.kind = FlipRuleCfg::Kind::FixedTarget;
  rule.target = 3;
  auto view = poison_view(data, 2, 5, rule);
  for (size_t i = 0; i < view.size(); ++i) CHECK(view.label(i) == 3);

  rule.target = 5;
  CHECK_THROWS(poison_view(data, 2, 5, rule));
  rule.target = -1;
  CHECK_THROWS(poison_view(data, 2, 5, rule));
}

TEST_CASE("clean view reads true labels") {
  auto data = sample_data();
  auto view = clean_view(data, 2, 5);
  for (size_t i = 0; i < view.size(); ++i)
    CHECK(view.label(i) == data.labels[i]);
  CHECK(view.row(1)[0] == 0.5f);
}

}  // TEST_SUITE
