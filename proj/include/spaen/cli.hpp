#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spaen {

// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `spaen` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "a,b,c" or "start:stop:count" (inclusive, evenly spaced).
std::vector<double> parse_number_list(const std::string& text);

}  // namespace spaen
