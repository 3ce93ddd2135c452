// Copyright Contributors to the uars project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace uars::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

/// Runs one command. `args` excludes the program name. Diagnostics go to
/// `err` as a single line; command output (help, metrics) goes to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace uars::cli
