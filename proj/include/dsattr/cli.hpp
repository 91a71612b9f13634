#pragma once

// Command-line dispatch, exposed as a function so tests can drive the tool
// in-process.

namespace dsattr {

/// Runs one tool invocation. Returns 0 on success, 1 on usage errors,
/// 2 on runtime failures.
int cli_main(int argc, const char* const* argv);

}  // namespace dsattr
