#pragma once

#include <string>
#include <vector>

namespace spoofnet::cli {

// Exit codes: 0 success, 2 config error, 3 input error, 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInput = 3;
inline constexpr int kExitNumeric = 4;

int run(const std::vector<std::string>& args);

}  // namespace spoofnet::cli
