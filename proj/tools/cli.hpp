// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace molf::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kOk = 0, kRuntimeError = 1, kUsageError = 2;

/// Environment variable naming the directory for outputs whose path is not
/// given on the command line.
inline constexpr const char* kOutputDirEnv = "MOLF_OUTPUT_DIR";

/// Parse argv and run one command. Results go to `out`; failures print a
/// single line to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace molf::cli
