#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace epgn::cli {

// Runs one command line (args excludes the program name). Output goes to
// out, diagnostics to err; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace epgn::cli
