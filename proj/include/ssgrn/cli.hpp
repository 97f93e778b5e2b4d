#pragma once

// Command-line front end. Every subcommand also accepts --config FILE, a
// flat "key = value" file whose keys are the long flag names; flags given on
// the command line take precedence.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ssgrn::cli {

struct ConfigEntry {
  std::string key;  // normalized: '_' replaced by '-'
  std::string value;
  std::size_t line = 0;
};

struct RunConfig {
  std::vector<ConfigEntry> entries;

  /// '#' starts a comment; blank lines are skipped; duplicate keys are errors.
  static RunConfig parse(std::istream& in, const std::string& source);
  static RunConfig load(const std::filesystem::path& path);
};

/// Returns the process exit code; failures print one "error: ..." line to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssgrn::cli
