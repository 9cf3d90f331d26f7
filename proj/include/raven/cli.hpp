#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace raven {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// `raven gen | train | eval | metrics | inspect | grid ...`; args exclude the
// program name. Returns the process exit code.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace raven
