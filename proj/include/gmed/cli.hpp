#pragma once

// Command-line front end: fit, bootstrap, simulate, replicate.
// Exit codes: 0 success, 1 usage, 2 input, 3 numerical failure.

#include <iosfwd>

namespace gmed::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gmed::cli
