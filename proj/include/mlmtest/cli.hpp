#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlmtest {

// Entry point of the mlmtest command; returns the process exit status
// (0 success, 2 input or validation error, 3 numerical failure).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlmtest
