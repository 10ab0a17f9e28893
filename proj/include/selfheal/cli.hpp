#pragma once

#include <string>
#include <vector>

namespace selfheal::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 budget exceeded,
/// 4 backend error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitBudget = 3;
inline constexpr int kExitBackend = 4;

int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace selfheal::cli
