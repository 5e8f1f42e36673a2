#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fmri_s4::cli {

/// Runs one command line (args exclude the program name). Returns 0 on
/// success, 2 on usage errors and 1 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmri_s4::cli
