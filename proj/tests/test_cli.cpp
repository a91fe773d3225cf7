// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "fedsim/cli.hpp"
#include "fedsim/feddata.hpp"
#include "fedsim/learning.hpp"
#include "fedsim/traces.hpp"
#include "util.hpp"

using namespace fedsim;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("fedsim");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Six equal-sized clients with traces off: every duration is identical, so
// runs are fast and straggler ratios are exactly 1.
std::string tiny_config_text(const std::string& seed_line) {
  return "algorithm = fedavg\n"
         "total_rounds = 3\n"
         "target_participants = 2\n"
         "overcommit = 1\n"
         "local_steps = 1\n"
         "batch_size = 4\n"
         "data.num_classes = 2\n"
         "data.feature_dim = 2\n"
         "eval_every = 1\n"
         "data.clients = 6\n"
         "data.samples_median = 6\n"
         "data.samples_sigma_log = 0\n"
         "traces_enabled = false\n" +
         seed_line;
}

std::vector<double> straggler_ratios(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(std::stod(line.substr(line.find(',') + 1)));
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run writes metrics, checkpoint, and optional CSVs") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 5\n"));
  std::string out = dir.file("out");
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", out, "--emit-timelines",
                 "--emit-client-acc"}) == 0);

  std::string metrics = testutil::read_file(out + "/metrics.csv");
  CHECK(metrics.rfind("round,virtual_time_s,", 0) == 0);
  CHECK(testutil::count_lines(metrics) == 4);  // header + 3 rounds

  std::string timelines = testutil::read_file(out + "/timelines.csv");
  CHECK(testutil::count_lines(timelines) == 7);  // header + 3 rounds x 2 selected

  ModelState model = load_checkpoint(out + "/model.bin");
  CHECK(model.param_count() == 2 * 2 + 2);

  std::string client_acc = testutil::read_file(out + "/client_accuracy.csv");
  CHECK(client_acc.rfind("client_id,samples,accuracy\n", 0) == 0);
  CHECK(testutil::count_lines(client_acc) >= 2);
}

TEST_CASE("worker pool size never changes the metrics bytes") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 5\n"));
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("w1"),
                 "--workers", "1"}) == 0);
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("w4"),
                 "--workers", "4"}) == 0);
  CHECK(testutil::read_file(dir.file("w1") + "/metrics.csv") ==
        testutil::read_file(dir.file("w4") + "/metrics.csv"));
}

TEST_CASE("bad invocations exit nonzero") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 5\n"));
  CHECK(run_cli({}) != 0);                                     // no subcommand
  CHECK(run_cli({"frobnicate"}) != 0);                         // unknown subcommand
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg")}) != 0);  // missing --out
  CHECK(run_cli({"run", "--config", dir.file("missing.cfg"), "--out", dir.file("o")}) == 1);
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("o"), "--set",
                 "bogus_key=1"}) == 1);
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("o"), "--set",
                 "seed=abc"}) == 1);
  CHECK(run_cli({"worker", "--config", dir.file("exp.cfg")}) != 0);  // missing --connect
}

TEST_CASE("seed precedence: flag beats env beats file") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("noseed.cfg"), tiny_config_text(""));
  testutil::write_file(dir.file("seed7.cfg"), tiny_config_text("seed = 7\n"));
  auto metrics = [&](const std::string& name) {
    return testutil::read_file(dir.file(name) + "/metrics.csv");
  };

  unsetenv("FEDSIM_SEED");
  CHECK(run_cli({"run", "--config", dir.file("seed7.cfg"), "--out", dir.file("a")}) == 0);

  setenv("FEDSIM_SEED", "7", 1);
  CHECK(run_cli({"run", "--config", dir.file("noseed.cfg"), "--out", dir.file("b")}) == 0);
  CHECK(metrics("b") == metrics("a"));  // env fills the gap

  setenv("FEDSIM_SEED", "999", 1);
  CHECK(run_cli({"run", "--config", dir.file("seed7.cfg"), "--out", dir.file("c")}) == 0);
  CHECK(metrics("c") == metrics("a"));  // config file wins over env

  CHECK(run_cli({"run", "--config", dir.file("noseed.cfg"), "--out", dir.file("d"), "--set",
                 "seed=7"}) == 0);
  CHECK(metrics("d") == metrics("a"));  // explicit flag wins over env

  CHECK(run_cli({"run", "--config", dir.file("noseed.cfg"), "--out", dir.file("e")}) == 0);
  CHECK(metrics("e") != metrics("a"));  // env seed 999 actually applies
  unsetenv("FEDSIM_SEED");
}

TEST_CASE("synth traces emits loadable, deterministic CSVs") {
  testutil::TempDir dir;
  CHECK(run_cli({"synth", "traces", "--n", "12", "--seed", "3", "--out", dir.file("t1")}) == 0);
  auto profiles = load_profiles(dir.file("t1") + "/profiles.csv");
  auto avail = load_availability(dir.file("t1") + "/availability.csv");
  CHECK(profiles.size() == 12);
  CHECK(avail.size() == 12);

  CHECK(run_cli({"synth", "traces", "--n", "12", "--seed", "3", "--out", dir.file("t2")}) == 0);
  CHECK(testutil::read_file(dir.file("t1") + "/profiles.csv") ==
        testutil::read_file(dir.file("t2") + "/profiles.csv"));
  CHECK(testutil::read_file(dir.file("t1") + "/availability.csv") ==
        testutil::read_file(dir.file("t2") + "/availability.csv"));
}

TEST_CASE("synth data feeds report data") {
  testutil::TempDir dir;
  CHECK(run_cli({"synth", "data", "--clients", "8", "--classes", "3", "--dim", "4", "--mode",
                 "dirichlet", "--alpha", "0.5", "--seed", "2", "--out", dir.file("d")}) == 0);
  auto clients = load_mapping(dir.file("d") + "/mapping.csv", 3, 4);
  CHECK(clients.size() == 8);
  for (const auto& [id, data] : clients) {
    (void)id;
    CHECK(data.size() > 0);
  }

  CHECK(run_cli({"report", "data", "--mapping", dir.file("d") + "/mapping.csv", "--classes", "3",
                 "--dim", "4", "--out", dir.file("het.csv")}) == 0);
  std::string het = testutil::read_file(dir.file("het.csv"));
  CHECK(het.find("mean_pairwise_js") != std::string::npos);

  CHECK(run_cli({"synth", "data", "--clients", "4", "--classes", "3", "--dim", "4", "--mode",
                 "nonsense", "--out", dir.file("x")}) == 1);
}

TEST_CASE("straggler report is exactly 1 for homogeneous clients") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 9\n"));
  std::string out = dir.file("out");
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", out, "--emit-timelines"}) == 0);
  CHECK(run_cli({"report", "stragglers", "--metrics", out + "/metrics.csv", "--timelines",
                 out + "/timelines.csv", "--out", dir.file("strag.csv")}) == 0);

  std::string csv = testutil::read_file(dir.file("strag.csv"));
  CHECK(csv.rfind("round,straggler_ratio\n", 0) == 0);
  auto ratios = straggler_ratios(csv);
  REQUIRE(ratios.size() == 3);
  for (double r : ratios) CHECK(r == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("accuracy report buckets every client") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("acc.csv"),
                       "client_id,samples,accuracy\n"
                       "a,10,0.25\n"
                       "b,5,0.5\n"
                       "c,5,0.96\n"
                       "d,5,1.0\n");
  CHECK(run_cli({"report", "accuracy", "--client-acc", dir.file("acc.csv"), "--out",
                 dir.file("hist.csv")}) == 0);
  std::string hist = testutil::read_file(dir.file("hist.csv"));
  CHECK(hist.rfind("bucket_lo,count\n", 0) == 0);
  CHECK(testutil::count_lines(hist) == 21);  // header + 20 buckets
  CHECK(hist.find("0.25,1") != std::string::npos);
  CHECK(hist.find("0.5,1") != std::string::npos);
  CHECK(hist.find("0.95,2") != std::string::npos);  // 0.96 and the 1.0 clamp
}

TEST_CASE("remote workers reproduce the local run byte for byte") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 13\n"));
  CHECK(run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("local")}) == 0);

  uint16_t port = testutil::reserve_port();
  std::string addr = "127.0.0.1:" + std::to_string(port);
  std::thread worker([&] {
    for (int i = 0; i < 500; ++i) {
      if (run_cli({"worker", "--connect", addr, "--config", dir.file("exp.cfg")}) == 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  });
  int rc = run_cli({"run", "--config", dir.file("exp.cfg"), "--out", dir.file("remote"),
                    "--workers", "1", "--connect", addr});
  worker.join();
  CHECK(rc == 0);
  CHECK(testutil::read_file(dir.file("remote") + "/metrics.csv") ==
        testutil::read_file(dir.file("local") + "/metrics.csv"));
}

TEST_CASE("unreachable engine address fails cleanly") {
  testutil::TempDir dir;
  testutil::write_file(dir.file("exp.cfg"), tiny_config_text("seed = 5\n"));
  uint16_t port = testutil::reserve_port();  // nobody listening here
  CHECK(cmd_worker("127.0.0.1:" + std::to_string(port), dir.file("exp.cfg"), {}) == 1);
  CHECK(cmd_worker("not-an-address", dir.file("exp.cfg"), {}) == 1);
}

}  // TEST_SUITE
