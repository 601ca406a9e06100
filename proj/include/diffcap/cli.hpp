#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace diffcap {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitIo = 1, kExitUsage = 2, kExitNumerical = 3 };

/// Runs one subcommand; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace diffcap
