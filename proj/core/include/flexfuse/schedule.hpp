#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "flexfuse/error.hpp"
#include "flexfuse/grid.hpp"

namespace flexfuse {

enum class ScheduleKind {
  linear,         // beta linearly spaced in [1e-4, 0.02]
  scaled_linear,  // same shape, endpoints scaled by 1000/T so short chains still reach noise
  cosine,
};

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Coefficients of the DDPM posterior mean q(f_{t-1} | f_t, f_0) and its std.
struct PosteriorCoefficients {
  double current;   // multiplies f_t
  double estimate;  // multiplies the f_0 estimate
  double sigma;     // std of the injected noise
};

/// Discrete variance schedule over steps t in [0, T). Immutable.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, std::size_t steps);

  ScheduleKind kind() const noexcept { return kind_; }
  std::size_t steps() const noexcept { return beta_.size(); }

  double beta(std::size_t t) const { return beta_.at(t); }
  double alpha(std::size_t t) const { return alpha_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  /// Cumulative product up to t-1, with the empty product (t = 0) equal to 1.
  double alpha_bar_prev(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(t - 1); }
  double sigma_tilde(std::size_t t) const { return sigma_tilde_.at(t); }

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
  const std::vector<double>& sigma_tildes() const noexcept { return sigma_tilde_; }

  /// Valid for t >= 1; t = 0 has no predecessor step.
  PosteriorCoefficients posterior(std::size_t t) const;

  void check_step(std::size_t t) const {
    if (t >= steps())
      throw InvalidArgument("diffusion step " + std::to_string(t) + " out of range [0," +
                            std::to_string(steps()) + ")");
  }

 private:
  ScheduleKind kind_;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_tilde_;
};

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps);
NoiseSchedule make_schedule(std::string_view kind, std::size_t steps);

namespace detail {
template <std::floating_point T>
void require_same_shape(const Grid<T>& a, const Grid<T>& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": shape mismatch");
}
}  // namespace detail

/// f_t = sqrt(abar_t) f0 + sqrt(1 - abar_t) z
template <std::floating_point T>
Grid<T> forward_perturb(const Grid<T>& f0, std::size_t t, const Grid<T>& z, const NoiseSchedule& s) {
  s.check_step(t);
  detail::require_same_shape(f0, z, "forward_perturb");
  const T a = static_cast<T>(std::sqrt(s.alpha_bar(t)));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar(t)));
  Grid<T> out(f0.rows(), f0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * f0[i] + b * z[i];
  return out;
}

/// Tweedie-style estimate of the clean image from a noise prediction.
template <std::floating_point T>
Grid<T> estimate_f0(const Grid<T>& ft, const Grid<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
  s.check_step(t);
  detail::require_same_shape(ft, eps_hat, "estimate_f0");
  const T inv = static_cast<T>(1.0 / std::sqrt(s.alpha_bar(t)));
  const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar(t)));
  Grid<T> out(ft.rows(), ft.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (ft[i] - b * eps_hat[i]) * inv;
  return out;
}

/// Score of the noising kernel implied by a noise prediction: -eps / sqrt(1 - abar_t).
template <std::floating_point T>
Grid<T> noise_to_score(const Grid<T>& eps_hat, std::size_t t, const NoiseSchedule& s) {
  s.check_step(t);
  const T k = static_cast<T>(-1.0 / std::sqrt(1.0 - s.alpha_bar(t)));
  Grid<T> out = eps_hat;
  for (auto& v : out.storage()) v *= k;
  return out;
}

/// Clean-image estimate in score form: (f_t + (1 - abar_t) score) / sqrt(abar_t).
template <std::floating_point T>
Grid<T> estimate_f0_from_score(const Grid<T>& ft, const Grid<T>& score, std::size_t t,
                               const NoiseSchedule& s) {
  s.check_step(t);
  detail::require_same_shape(ft, score, "estimate_f0_from_score");
  const T inv = static_cast<T>(1.0 / std::sqrt(s.alpha_bar(t)));
  const T w = static_cast<T>(1.0 - s.alpha_bar(t));
  Grid<T> out(ft.rows(), ft.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (ft[i] + w * score[i]) * inv;
  return out;
}

/// One ancestral step f_t -> f_{t-1} given a (corrected) clean estimate.
template <std::floating_point T>
Grid<T> posterior_step(const Grid<T>& ft, const Grid<T>& f0_hat, std::size_t t, const Grid<T>& z,
                       const NoiseSchedule& s) {
  s.check_step(t);
  if (t == 0) throw InvalidArgument("posterior_step: t = 0 has no further step");
  detail::require_same_shape(ft, f0_hat, "posterior_step");
  detail::require_same_shape(ft, z, "posterior_step");
  const auto c = s.posterior(t);
  const T a = static_cast<T>(c.current), b = static_cast<T>(c.estimate), sg = static_cast<T>(c.sigma);
  Grid<T> out(ft.rows(), ft.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * ft[i] + b * f0_hat[i] + sg * z[i];
  return out;
}

}  // namespace flexfuse
