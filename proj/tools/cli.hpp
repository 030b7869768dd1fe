#pragma once

#include <ostream>

namespace hsifuse::cli {

/// Exit codes pinned for scripts.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Parses and runs one subcommand. Normal output goes to `out`, diagnostics
/// to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hsifuse::cli
