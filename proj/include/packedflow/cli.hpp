#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace packedflow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Entry point of the packedflow executable. args excludes the program name.
// Subcommands: gen, train, cv, eval, bench.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace packedflow
