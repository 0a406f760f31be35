#pragma once

#include <string>
#include <vector>

namespace dynkd {

/// Runs one `dynkd` invocation; `args` excludes the program name.
/// Returns 0 on success, 2 for configuration/usage errors, 1 otherwise.
int run_cli(const std::vector<std::string>& args);

int run_cli(int argc, char** argv);

}  // namespace dynkd
