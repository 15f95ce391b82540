#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cosmo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Subcommands: gen, train, count-fn, eval, label-shape, sweep.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cosmo::cli
