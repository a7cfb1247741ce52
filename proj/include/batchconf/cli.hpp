#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace batchconf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 2;
inline constexpr int kExitConfig = 3;

// Environment variable consulted for the default seed.
inline constexpr const char* kSeedEnv = "BATCHCONF_SEED";

std::string_view Version();

// Runs the command line `args` (without the program name). Reports go to
// `out`, diagnostics to `err`; returns the process exit code.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace batchconf
