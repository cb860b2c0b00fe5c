#pragma once

#include <string>
#include <vector>

namespace molmix {

// Entry point shared by the binary and the CLI tests. args excludes the
// program name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace molmix
