#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace delc::cli {

/// Runs the tool with `args` (program name excluded). Returns the process
/// exit code: 0 iff all requested work succeeded.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace delc::cli
