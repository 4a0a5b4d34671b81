#pragma once

namespace kvmt {

/// Entry point of the kvmt command-line tool. Returns 0 on success, 2 on a
/// usage error and 1 on a runtime error (message on stderr).
int cli_dispatch(int argc, char** argv);

}  // namespace kvmt
