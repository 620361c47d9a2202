#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace retgen {

enum ExitCode { kExitOk = 0, kExitOperational = 1, kExitUsage = 2 };

/// Runs one CLI invocation. `args` excludes the program name. Records and
/// results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace retgen
