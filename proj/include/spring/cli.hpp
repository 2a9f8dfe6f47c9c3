// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spring/error.hpp"

namespace spring {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind kind);

/// Entry point of the `spring` binary. `args` excludes the program name.
/// Progress goes to `out`, diagnostics to `err`; returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses an integer grid: "5", "0,1,5,50" or "a:b" (inclusive range).
std::vector<int> parse_int_grid(const std::string& text);

/// Default run configuration; every section can be overridden by a
/// --config file and then by flags.
nlohmann::json default_run_config();

}  // namespace spring
