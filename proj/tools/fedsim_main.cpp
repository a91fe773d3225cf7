// SPDX-License-Identifier: Apache-2.0

#include "fedsim/cli.hpp"

int main(int argc, char** argv) { return fedsim::cli_main(argc, argv); }
