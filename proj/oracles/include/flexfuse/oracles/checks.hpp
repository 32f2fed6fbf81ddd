#pragma once

// Property checks built on the reference implementations. Each returns a
// summary rather than asserting, so the same code drives unit tests, the
// acceptance runner and `flexfuse selftest`.

#include <cstdint>
#include <string>
#include <vector>

#include "flexfuse/dfm.hpp"
#include "flexfuse/schedule.hpp"

namespace flexfuse::oracle {

struct CheckResult {
  bool passed = true;
  std::size_t trials = 0;
  double worst = 0.0;   // worst observed error statistic
  std::string detail;
  double seconds = 0.0;
};

/// k_update against the dense periodic solve; worst relative max-norm error.
/// fault > 0 corrupts the operator's transfer cache before solving.
CheckResult check_fft_solver(std::size_t trials, const std::vector<std::size_t>& sizes, std::uint64_t seed,
                             double tolerance = 1e-8, double fault = 0.0);

/// u_update and x_update against per-element quadratic vertices.
CheckResult check_subproblems(std::size_t trials, std::size_t size, std::uint64_t seed, double tolerance = 1e-10);

/// With m, n frozen no coordinate step raises the splitting objective, and
/// the core objective agrees with the naive double loop.
CheckResult check_monotonicity(std::size_t trials, std::size_t size, std::uint64_t seed, double slack = 1e-9);

/// ZOH against RK4 on random stable scalar systems, plus series/exact agreement
/// at the branch switch.
CheckResult check_zoh(std::size_t trials, std::uint64_t seed, double tolerance = 1e-6,
                      double switch_tolerance = 1e-10);

/// Time-invariant scan against causal convolution with the unrolled kernel.
CheckResult check_scan_convolution(std::size_t max_length, std::uint64_t seed, double tolerance = 1e-5);

/// Every primitive and the composed model in both precisions.
CheckResult check_gradients(std::uint64_t seed, std::size_t coords_per_tensor = 3);

/// Two-modal fusion vs three-modal fusion with an all-zero third source.
CheckResult check_degeneracy(const DfmParams<float>& params, const NoiseSchedule& sched, std::size_t stacks,
                             std::size_t size, std::uint64_t seed);

/// Exact noise supplied as the prediction: single-step and full-chain recovery.
CheckResult check_perfect_inversion(std::size_t steps, std::uint64_t seed, double step_tolerance = 1e-5,
                                    double chain_tolerance = 1e-3);

/// Core metrics against the naive versions, plus the exact identity cases.
CheckResult check_metrics(std::size_t trials, std::size_t size, std::uint64_t seed, double tolerance = 1e-6);

/// A randomized denoiser whose outputs are not identically zero.
DfmParams<float> jittered_params(const DfmConfig& cfg, std::uint64_t seed, double amplitude = 0.05);

}  // namespace flexfuse::oracle
