#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace transmat::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

/// Runs the transmat command line on `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// TRANSMAT_SEED, when set; throws ConfigError if it is not an unsigned integer.
bool env_seed(uint64_t& seed);

}  // namespace transmat::cli
