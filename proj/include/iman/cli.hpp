#pragma once

namespace iman {

// Entry point behind the `iman` binary. Exit codes: 0 success, 1 usage or
// validation error, 2 runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace iman
