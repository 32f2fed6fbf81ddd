#include "flexfuse/schedule.hpp"

#include <algorithm>
#include <numbers>

namespace flexfuse {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "scaled_linear" || name == "scaled-linear") return ScheduleKind::scaled_linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw InvalidArgument("unknown schedule kind '" + std::string(name) +
                        "' (expected linear, scaled_linear or cosine)");
}

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::scaled_linear: return "scaled_linear";
    case ScheduleKind::cosine: return "cosine";
  }
  return "?";
}

namespace {

constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 0.02;
constexpr double kBetaMax = 0.999;

std::vector<double> linear_betas(double start, double end, std::size_t steps) {
  std::vector<double> beta(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(steps - 1);
    beta[t] = std::min(start + (end - start) * frac, kBetaMax);
  }
  return beta;
}

std::vector<double> cosine_betas(std::size_t steps) {
  constexpr double s = 0.008;
  const auto f = [&](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> beta(steps);
  const double n = static_cast<double>(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double a0 = f(static_cast<double>(t) / n), a1 = f(static_cast<double>(t + 1) / n);
    beta[t] = std::clamp(1.0 - a1 / a0, 1e-8, kBetaMax);
  }
  // Guard against rounding-level decreases so beta stays non-decreasing.
  for (std::size_t t = 1; t < steps; ++t) beta[t] = std::max(beta[t], beta[t - 1]);
  return beta;
}

}  // namespace

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::size_t steps) : kind_(kind) {
  if (steps < 2) throw InvalidArgument("schedule needs at least 2 steps");
  switch (kind) {
    case ScheduleKind::linear:
      beta_ = linear_betas(kBetaStart, kBetaEnd, steps);
      break;
    case ScheduleKind::scaled_linear: {
      const double scale = 1000.0 / static_cast<double>(steps);
      beta_ = linear_betas(kBetaStart * scale, kBetaEnd * scale, steps);
      break;
    }
    case ScheduleKind::cosine:
      beta_ = cosine_betas(steps);
      break;
  }

  alpha_.resize(steps);
  alpha_bar_.resize(steps);
  sigma_tilde_.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    alpha_[t] = 1.0 - beta_[t];
    prod *= alpha_[t];
    alpha_bar_[t] = prod;
  }
  sigma_tilde_[0] = 0.0;
  for (std::size_t t = 1; t < steps; ++t)
    sigma_tilde_[t] = std::sqrt(beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]));
}

PosteriorCoefficients NoiseSchedule::posterior(std::size_t t) const {
  check_step(t);
  if (t == 0) throw InvalidArgument("posterior coefficients undefined at t = 0");
  const double abar = alpha_bar_[t], abar_prev = alpha_bar_[t - 1];
  return {std::sqrt(alpha_[t]) * (1.0 - abar_prev) / (1.0 - abar),
          std::sqrt(abar_prev) * beta_[t] / (1.0 - abar), sigma_tilde_[t]};
}

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps) { return NoiseSchedule(kind, steps); }

NoiseSchedule make_schedule(std::string_view kind, std::size_t steps) {
  return NoiseSchedule(parse_schedule_kind(kind), steps);
}

}  // namespace flexfuse
