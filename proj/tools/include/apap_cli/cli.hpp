#pragma once

#include <iosfwd>

namespace apap::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitGuidance = 4;

/// Entry point of the `apap` tool: subcommands deform, arap, mesh-from-mask,
/// render and bench. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace apap::cli
