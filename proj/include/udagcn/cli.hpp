#pragma once

#include <iosfwd>

namespace udagcn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point behind the udagcn executable. Diagnostics go to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace udagcn
