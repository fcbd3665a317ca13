#pragma once

#include <string>
#include <vector>

namespace koopman::cli {

/// Entry point of the koopman-mp command line tool.
/// Exit codes: 0 success, 1 usage/config error, 2 numerical failure,
/// 3 acceptance-threshold failure (experiment runs with --check).
int run(const std::vector<std::string>& args);

int run(int argc, const char* const* argv);

}  // namespace koopman::cli
