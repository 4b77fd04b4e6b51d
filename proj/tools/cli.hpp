#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace farm {

/// Exit codes of the command-line interface.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitReject = 3 };

/// Runs the command line `args` (args[0] is the program name). Normal output
/// goes to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace farm
