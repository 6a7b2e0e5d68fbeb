#pragma once

#include <iosfwd>

namespace survtrace::cli {

// Runs one subcommand (synth, train, eval, predict, attention). Returns the
// process exit status; diagnostics go to `err`, progress to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace survtrace::cli
