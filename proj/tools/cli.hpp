#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kgd::cli {

/// Runs the `kgd` command line. `args` excludes the program name.
/// Returns 0 on success, 2 on user/input error, 1 on internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kgd::cli
