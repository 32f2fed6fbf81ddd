#include "flexfuse/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>

namespace flexfuse {

namespace {

Field normal_field(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Field f(h, w);
  for (auto& v : f.storage()) v = normal(rng);
  return f;
}

void require_finite(const Field& f, std::size_t t, const char* what) {
  if (!all_finite(f))
    throw NumericalError(std::string(what) + " became non-finite at diffusion step " + std::to_string(t));
}

NormalizedImage finish(const Field& f0, const PadRecord& extent) {
  Grid<float> out = crop(f0, extent).cast<float>();
  for (auto& v : out.storage()) v = std::clamp(v, -1.0f, 1.0f);
  return NormalizedImage(std::move(out));
}

using Correction = std::function<Field(const Field& f_tilde, std::size_t t)>;

// Shared reverse loop. `correct` maps the clean estimate to the one used by the posterior step.
Field reverse_chain(const DfmParams<float>& params, const NoiseSchedule& sched, std::uint64_t seed,
                    std::size_t h, std::size_t w, const Correction& correct) {
  std::mt19937_64 rng(seed);
  Field f = normal_field(h, w, rng);
  for (std::size_t t = sched.steps(); t-- > 0;) {
    const Field eps = denoise(f.cast<float>(), t, params).cast<double>();
    require_finite(eps, t, "noise prediction");
    const Field f_tilde = estimate_f0(f, eps, t, sched);
    Field f_hat = correct(f_tilde, t);
    require_finite(f_hat, t, "corrected estimate");
    if (t == 0) {
      f = std::move(f_hat);
    } else {
      const Field z = normal_field(h, w, rng);
      f = posterior_step(f, f_hat, t, z, sched);
      require_finite(f, t, "sample");
    }
  }
  return f;
}

}  // namespace

FusionResult fuse(const FusionRun& run) {
  if (!run.denoiser) throw InvalidArgument("fuse: no denoiser parameters");
  run.em.validate();
  run.stack.validate();
  const std::size_t p = run.denoiser->config.patch;
  if (run.denoiser->config.channels != 1)
    throw InvalidArgument("fuse: denoiser must be single-channel, checkpoint has c = " +
                          std::to_string(run.denoiser->config.channels));

  const PaddedImage a = pad_to_multiple(run.stack.img1, p);
  SourceStack padded{a.image, pad_to_multiple(run.stack.img2, p).image, std::nullopt};
  if (run.stack.img3) padded.img3 = pad_to_multiple(*run.stack.img3, p).image;
  const SourceFields src = to_fields(padded);

  const std::size_t h = padded.height(), w = padded.width();
  const GradientOperator op(h, w);
  EMState state = EMState::fresh(run.em);
  FusionResult result;

  const Field f0 = reverse_chain(*run.denoiser, run.sched, run.seed, h, w, [&](const Field& f_tilde, std::size_t t) {
    Field f_hat = em_correct(f_tilde, src, run.em, state, op);
    if (run.record_trace)
      result.trace.push_back({t, l2_norm(f_tilde), l2_norm(f_hat), state.gamma, state.rho, state.objective});
    return f_hat;
  });
  result.fused = finish(f0, a.original);
  return result;
}

NormalizedImage unconditional_sample(const DfmParams<float>& denoiser, const NoiseSchedule& sched,
                                     std::uint64_t seed, std::size_t height, std::size_t width) {
  const std::size_t p = denoiser.config.patch;
  if (height == 0 || width == 0) throw InvalidArgument("unconditional_sample: empty extent");
  const std::size_t h = (height + p - 1) / p * p, w = (width + p - 1) / p * p;
  const Field f0 =
      reverse_chain(denoiser, sched, seed, h, w, [](const Field& f_tilde, std::size_t) { return f_tilde; });
  return finish(f0, PadRecord{height, width});
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace " + path.string());
  out << "t,f_tilde_norm,f_hat_norm,gamma,rho,objective\n" << std::setprecision(12);
  for (const auto& r : trace)
    out << r.t << ',' << r.f_tilde_norm << ',' << r.f_hat_norm << ',' << r.gamma << ',' << r.rho << ','
        << r.objective << '\n';
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace flexfuse
