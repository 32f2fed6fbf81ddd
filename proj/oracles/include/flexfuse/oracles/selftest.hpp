#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "flexfuse/oracles/checks.hpp"

namespace flexfuse::oracle {

struct SelftestOptions {
  std::uint64_t seed = 20240601;
  double fft_fault = 0.0;  // non-zero corrupts the transfer cache in the dense-solve suite
};

struct Suite {
  std::string name;
  std::string group;  // module the suite exercises; `--suite` matches either field
  std::function<CheckResult(const SelftestOptions&)> run;
};

const std::vector<Suite>& selftest_suites();

/// Suites whose name or group equals `filter`; all suites for an empty filter.
/// Throws InvalidArgument if nothing matches.
std::vector<const Suite*> select_suites(const std::string& filter);

struct SuiteOutcome {
  std::string name;
  CheckResult result;
};

/// Runs the selected suites, printing one line per suite to `log`.
std::vector<SuiteOutcome> run_selftest(const std::string& filter, const SelftestOptions& opts, std::ostream& log);

}  // namespace flexfuse::oracle
