#pragma once

#include <string>
#include <vector>

namespace attrsae {

// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
// failure. `args` excludes the program name. Exposed so tests can drive the
// CLI in-process.
int run_cli(const std::vector<std::string>& args);

}  // namespace attrsae
