// SPDX-License-Identifier: Apache-2.0
#include "amuse/cli.hpp"

int main(int argc, char** argv) { return amuse::run_cli(argc, argv); }
