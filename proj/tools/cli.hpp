#pragma once

#include <ostream>

namespace capsnet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Full command line entry point; argv[0] is the program name. Output goes
/// to `out`, diagnostics to `err`. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capsnet::cli
