#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace somnoflow::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2 };

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
/// Same, with an explicit stdin for `serve`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

/// Full help text of one subcommand (or the top level when empty).
std::string help_text(const std::string& subcommand = {});

}  // namespace somnoflow::cli
