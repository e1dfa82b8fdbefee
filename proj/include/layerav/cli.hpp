#pragma once

#include <iosfwd>

namespace layerav {

// Exit codes of the layerav command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitNotFound = 2;
inline constexpr int kExitIncompatible = 3;
inline constexpr int kExitInput = 4;

/// Entry point of the `layerav` tool. Reports go to `out`, errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace layerav
