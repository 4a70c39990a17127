// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: one verb per pipeline stage. Exit codes: 0 success,
// 2 config error, 1 run error.

#pragma once

namespace cap {

int run_cli(int argc, const char* const* argv);

}  // namespace cap
