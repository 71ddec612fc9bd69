#pragma once

#include <iosfwd>

namespace crgrf::cli {

// Exit codes: 0 success, 2 usage or validation error, 3 estimation failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitEstimation = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crgrf::cli
