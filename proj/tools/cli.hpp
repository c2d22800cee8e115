#pragma once

#include <ostream>

namespace dc::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,       // malformed command line
  kConfig = 2,      // config parse/validation error, checkpoint/config mismatch
  kIo = 3,          // missing or unreadable files, bad file formats
  kNumerical = 4,   // non-finite loss or gradient aborted a run
  kTolerance = 5,   // gradient check or freeze check failed
};

/// Runs one command; all output goes to `out` / `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dc::cli
