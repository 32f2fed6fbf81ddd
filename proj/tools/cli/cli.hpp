#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flexfuse::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kRuntime = 2,
  kSelftestFailed = 3,
};

/// Entry point of the `flexfuse` tool. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flexfuse::cli
