#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace ser::cli {

/// Flat `key = value` file; `#` starts a comment. Keys are long flag names
/// without the leading dashes. Duplicate keys throw ParseError.
std::map<std::string, std::string> load_config(const std::filesystem::path& path);

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on a domain error and 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ser::cli
