// SPDX-License-Identifier: Apache-2.0
#include "uni4eye/cli.hpp"

int main(int argc, char **argv) { return uni4eye::cli::run_cli(argc, argv); }
