#pragma once

namespace rd {

// Entry point for the command-line tool. Returns the process exit code:
// 0 success, 1 validation/usage error, 2 runtime or I/O error.
int dispatch(int argc, const char* const* argv);

// Runs the built-in gradient-check and sparsification oracle suites.
// Returns the number of failures and reports counts on stdout.
int run_selftest();

}  // namespace rd
