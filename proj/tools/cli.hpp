#pragma once

#include <iosfwd>

namespace vid2act {

/// Parses arguments and runs one of gen-data, pretrain, train, eval, plot.
/// Returns the process exit code; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vid2act
