// SPDX-License-Identifier: Apache-2.0

#include "cap/cli.hpp"

int main(int argc, char** argv) { return cap::run_cli(argc, argv); }
