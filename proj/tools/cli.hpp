// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The epsakit Authors.
//
// The `epsakit` command line, callable in-process so tests can drive it
// without spawning a shell.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace epsa::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,     // bad flags, unknown model, unreadable config
  kNumeric = 3,   // gradient mismatch, non-finite loss or forward output
};

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace epsa::cli
