// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Training worker for the federated learning simulator"};
  std::string connect, config;
  std::vector<std::string> sets;
  app.add_option("--connect", connect, "Engine address host:port")->required();
  app.add_option("--config", config, "Experiment config (rebuilds the dataset)")->required();
  app.add_option("--set", sets, "Override config key (key=value, repeatable)");
  CLI11_PARSE(app, argc, argv);
  return fedsim::cmd_worker(connect, config, sets);
}
