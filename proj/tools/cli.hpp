#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace samtta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one subcommand. args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Closest known subcommand by edit distance, or "" if none is close.
std::string suggest_subcommand(const std::string& name);

}  // namespace samtta::cli
