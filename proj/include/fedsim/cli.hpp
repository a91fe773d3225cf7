// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace fedsim {

// Entry point shared by the fedsim binary and in-process tests. argv[0] is
// the program name. Returns a process exit code; never throws.
int cli_main(int argc, const char* const* argv);

// Worker process body: reconstructs the dataset from the config (required so
// tasks can be executed locally), connects, and serves until shutdown.
int cmd_worker(const std::string& connect, const std::string& config_path,
               const std::vector<std::string>& overrides);

}  // namespace fedsim
