#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hcg {

/// Command-line driver. `args` are the arguments after the program name, in
/// natural order. Reports go to `out` (or the --out file), diagnostics to
/// `err`.
///
/// Exit codes: 0 success, 1 usage errors, 2 malformed or infeasible model
/// configs, 3 failed tolerance or verification checks.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

/// argv-style wrapper around the vector overload.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hcg
