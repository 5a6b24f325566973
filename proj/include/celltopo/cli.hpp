#pragma once

// Command-line front end: pattern, oracle, train, predict, compare, sweep and
// selftest subcommands over the library.

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace celltopo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // operational failure
inline constexpr int kExitUsage = 2;    // bad arguments or configuration

/// Argument or configuration problem; reported with exit code 2.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Parses a key=value configuration file: one pair per line, '#' starts a
/// comment, keys are option names without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

/// Runs one subcommand. `args` excludes the program name. Errors are
/// reported on `err` as a single "celltopo: error[usage|runtime]: ..." line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace celltopo
