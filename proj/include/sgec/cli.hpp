#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sgec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Runs one command line (args[0] is the program name). Regular output goes to
// `out`; diagnostics, usage errors and log lines go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace sgec::cli
