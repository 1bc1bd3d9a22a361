#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "proxrefl/errors.hpp"

namespace proxrefl {

inline constexpr const char* kToolkitVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitUsage = 2,
  kExitData = 3,
  kExitConvergence = 4,
  kExitTransport = 5,
};

int exit_code_for(ErrorKind kind);

// Runs one command line (args[0] is the program name). Never throws; errors are
// printed to `err` and mapped onto an exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace proxrefl
