#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace daicl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point for the `daicl` tool; returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace daicl::cli
