#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "carthresh/validation.hpp"

namespace carthresh::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kInputError = 2,
  kDivergence = 3,
  kOracleFailure = 4,
};

/// Runs the command line `args` (args[0] is the program name). Results go
/// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The `validate` subcommand with injectable formulas, so a corrupted
/// formula can be checked to fail.
int validate_command(std::uint64_t seed, std::size_t cases, std::ostream& out, std::ostream& err,
                     PrecisionFormula spatial = {}, PrecisionFormula nonspatial = {});

}  // namespace carthresh::cli
