#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sfanet {

/// Entry point behind the `sfanet` executable. `args` excludes the program
/// name. Returns the process exit code; usage errors print help to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sfanet
