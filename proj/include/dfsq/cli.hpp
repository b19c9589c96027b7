#pragma once

namespace dfsq {

// Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.
int cli_main(int argc, char** argv);

}  // namespace dfsq
