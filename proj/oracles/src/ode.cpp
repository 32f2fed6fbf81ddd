#include "flexfuse/oracles/ode.hpp"

#include <cmath>

namespace flexfuse::oracle {

namespace {

long double rk4(long double a, long double b, long double u, long double h0, long double delta, std::size_t steps) {
  const long double dt = delta / static_cast<long double>(steps);
  const auto f = [&](long double h) { return a * h + b * u; };
  long double h = h0;
  for (std::size_t i = 0; i < steps; ++i) {
    const long double k1 = f(h);
    const long double k2 = f(h + 0.5L * dt * k1);
    const long double k3 = f(h + 0.5L * dt * k2);
    const long double k4 = f(h + dt * k3);
    h += dt / 6.0L * (k1 + 2.0L * k2 + 2.0L * k3 + k4);
  }
  return h;
}

}  // namespace

ZohReference integrate_zoh(double a, double b, double delta, std::size_t steps) {
  return {static_cast<double>(rk4(a, b, 0.0L, 1.0L, delta, steps)),
          static_cast<double>(rk4(a, b, 1.0L, 0.0L, delta, steps))};
}

std::vector<double> scan_by_convolution(const std::vector<double>& x, std::size_t length, std::size_t channels,
                                        const std::vector<double>& a_bar, const std::vector<double>& b_bar,
                                        const std::vector<double>& c, std::size_t state) {
  std::vector<double> kernel(length * channels, 0.0);
  for (std::size_t e = 0; e < channels; ++e)
    for (std::size_t n = 0; n < state; ++n) {
      double p = 1.0;
      for (std::size_t j = 0; j < length; ++j) {
        kernel[j * channels + e] += c[n] * p * b_bar[e * state + n];
        p *= a_bar[e * state + n];
      }
    }
  std::vector<double> y(length * channels, 0.0);
  for (std::size_t t = 0; t < length; ++t)
    for (std::size_t e = 0; e < channels; ++e)
      for (std::size_t j = 0; j <= t; ++j) y[t * channels + e] += kernel[j * channels + e] * x[(t - j) * channels + e];
  return y;
}

}  // namespace flexfuse::oracle
