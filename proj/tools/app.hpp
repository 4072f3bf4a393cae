#pragma once

#include <ostream>

namespace safl::cli {

/// Exit statuses of the `safl` driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,      // bad flags or invalid parameter values
  kExitBadData = 2,    // malformed input file or inconsistent inputs
  kExitIo = 3,         // missing upstream artifact or filesystem failure
  kExitNumeric = 4,    // training diverged
};

/// Parses argv, runs one subcommand and maps exceptions to exit statuses.
/// Normal output goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace safl::cli
