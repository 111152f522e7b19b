#pragma once

#include <string>
#include <vector>

namespace lw::cli {

/// Entry point behind the binary: args exclude the program name.
/// Returns the process exit code: 0 success, 1 invalid input, 2 runtime
/// failure.
int run(const std::vector<std::string>& args);

}  // namespace lw::cli
