#pragma once

#include <ostream>

namespace homofm::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // a command ran and failed
inline constexpr int kExitUsage = 2;    // bad flags or arguments

/// Runs one subcommand (gen, train, eval, infer, ablate, gradcheck, probe).
/// Normal output goes to `out`; diagnostics and usage go to `err`.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace homofm::cli
