#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace semfilter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name). JSON results go to
/// `out`; usage text, logs and the structured error line go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace semfilter::cli
