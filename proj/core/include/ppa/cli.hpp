// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ppa {

/// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command: gen-data, preprocess, train-align, finetune, eval or
/// ablate. args excludes the program name. Human-readable progress goes to
/// out, diagnostics to err. Returns 0 on success, 2 for usage errors and 1
/// for runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Name of the run manifest written into every --out directory.
inline constexpr const char* kManifestFile = "manifest.cfg";

}  // namespace ppa
