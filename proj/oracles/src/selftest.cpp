#include "flexfuse/oracles/selftest.hpp"

#include <iomanip>

#include "flexfuse/error.hpp"

namespace flexfuse::oracle {

const std::vector<Suite>& selftest_suites() {
  static const std::vector<Suite> suites = {
      {"dense-solve", "em",
       [](const SelftestOptions& o) { return check_fft_solver(25, {8, 16}, o.seed, 1e-8, o.fft_fault); }},
      {"subproblems", "em", [](const SelftestOptions& o) { return check_subproblems(100, 8, o.seed); }},
      {"monotonicity", "em", [](const SelftestOptions& o) { return check_monotonicity(100, 8, o.seed); }},
      {"zoh", "dfm", [](const SelftestOptions& o) { return check_zoh(50, o.seed); }},
      {"scan", "dfm", [](const SelftestOptions& o) { return check_scan_convolution(64, o.seed); }},
      {"gradcheck", "traingrad", [](const SelftestOptions& o) { return check_gradients(o.seed); }},
      {"inversion", "schedule", [](const SelftestOptions& o) { return check_perfect_inversion(100, o.seed); }},
      {"degeneracy", "sampler",
       [](const SelftestOptions& o) {
         const auto params = jittered_params(DfmConfig::desk(), o.seed);
         return check_degeneracy(params, NoiseSchedule(ScheduleKind::scaled_linear, 100), 3, 8, o.seed);
       }},
      {"metrics", "metrics", [](const SelftestOptions& o) { return check_metrics(20, 16, o.seed); }},
  };
  return suites;
}

std::vector<const Suite*> select_suites(const std::string& filter) {
  std::vector<const Suite*> out;
  for (const auto& s : selftest_suites())
    if (filter.empty() || s.name == filter || s.group == filter) out.push_back(&s);
  if (out.empty()) {
    std::string known;
    for (const auto& s : selftest_suites()) known += " " + s.name;
    throw InvalidArgument("no self-test suite matches '" + filter + "'; suites:" + known);
  }
  return out;
}

std::vector<SuiteOutcome> run_selftest(const std::string& filter, const SelftestOptions& opts, std::ostream& log) {
  std::vector<SuiteOutcome> outcomes;
  for (const Suite* s : select_suites(filter)) {
    CheckResult r;
    try {
      r = s->run(opts);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    log << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(13) << s->name << std::right << " checks "
        << std::setw(5) << r.trials << "  worst " << std::scientific << std::setprecision(2) << r.worst
        << std::defaultfloat << "  " << std::fixed << std::setprecision(2) << r.seconds << "s" << std::defaultfloat;
    if (!r.passed) log << "  " << r.detail;
    log << '\n';
    outcomes.push_back({s->name, std::move(r)});
  }
  return outcomes;
}

}  // namespace flexfuse::oracle
