#pragma once

#include <string>
#include <vector>

namespace vrag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs the command line `args` (args[0] is the program name) and returns the
// process exit code. Never throws.
int run(const std::vector<std::string>& args);

}  // namespace vrag::cli
