#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flexfuse/dfm.hpp"
#include "flexfuse/em.hpp"
#include "flexfuse/imageio.hpp"
#include "flexfuse/schedule.hpp"

namespace flexfuse {

struct TraceRow {
  std::size_t t;
  double f_tilde_norm;
  double f_hat_norm;
  double gamma;
  double rho;
  double objective;
};

struct FusionRun {
  SourceStack stack;
  NoiseSchedule sched;
  const DfmParams<float>* denoiser = nullptr;
  EMConfig em;
  std::uint64_t seed = 0;
  bool record_trace = false;
};

struct FusionResult {
  NormalizedImage fused;
  std::vector<TraceRow> trace;  // one row per step, t descending; empty unless requested
};

/// Reverse diffusion from N(0, I) with the EM correction applied to every
/// clean estimate. Sources are reflect-padded to the patch size and the
/// result is cropped back and clamped to [-1,1]. Throws NumericalError naming
/// the step if a field turns non-finite.
FusionResult fuse(const FusionRun& run);

/// Plain ancestral sampling with the model prior only.
NormalizedImage unconditional_sample(const DfmParams<float>& denoiser, const NoiseSchedule& sched,
                                     std::uint64_t seed, std::size_t height, std::size_t width);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path);

}  // namespace flexfuse
