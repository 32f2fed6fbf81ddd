#include "flexfuse/oracles/checks.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include "flexfuse/em.hpp"
#include "flexfuse/metrics.hpp"
#include "flexfuse/oracles/dense.hpp"
#include "flexfuse/oracles/gradcheck.hpp"
#include "flexfuse/oracles/naive_metrics.hpp"
#include "flexfuse/oracles/ode.hpp"
#include "flexfuse/primitives.hpp"
#include "flexfuse/sampler.hpp"

namespace flexfuse::oracle {

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double max_abs(const Field& f) {
  double m = 0.0;
  for (double v : f.storage()) m = std::max(m, std::abs(v));
  return m;
}

double max_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// track_worst = false for side checks whose scale differs from the headline statistic.
void note(CheckResult& r, double err, double tol, const std::string& where, bool track_worst = true) {
  ++r.trials;
  if (!(err <= tol)) {
    if (r.passed) r.detail = where;
    r.passed = false;
  }
  if (track_worst && (err > r.worst || std::isnan(err))) r.worst = std::isnan(err) ? INFINITY : err;
}

Field nonneg_field(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return random_field(h, w, rng, 0.0, 2.0);
}

}  // namespace

CheckResult check_fft_solver(std::size_t trials, const std::vector<std::size_t>& sizes, std::uint64_t seed,
                             double tolerance, double fault) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t n : sizes) {
    GradientOperator op(n, n);
    if (fault != 0.0) op.corrupt_transfer(fault);
    for (std::size_t i = 0; i < trials; ++i) {
      const Field x = random_field(n, n, rng);
      const GradientField u = random_gradient_field(n, n, rng);
      const Field dense = dense_k_solve(x, u);
      double err = INFINITY;
      std::string where = std::to_string(n) + "x" + std::to_string(n) + " trial " + std::to_string(i);
      try {
        err = max_diff(k_update(x, u, op), dense) / std::max(max_abs(dense), 1e-300);
      } catch (const std::exception& e) {
        where += ": " + std::string(e.what());
      }
      note(r, err, tolerance, where);
    }
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_subproblems(std::size_t trials, std::size_t size, std::uint64_t seed, double tolerance) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eta_d(0.01, 2.0), psi_d(0.01, 2.0);
  const GradientOperator op(size, size);
  for (std::size_t i = 0; i < trials; ++i) {
    const double eta = eta_d(rng), psi = psi_d(rng);
    const Field k = random_field(size, size, rng);
    const GradientField u = u_update(k, eta, psi, op);
    const GradientField ur = reference_u(k, eta, psi);
    note(r, std::max(max_diff(u.h, ur.h), max_diff(u.v, ur.v)), tolerance, "u trial " + std::to_string(i));

    const Field y = random_field(size, size, rng);
    const Field m = nonneg_field(size, size, rng), n = nonneg_field(size, size, rng);
    const Field x = x_update(y, k, m, n, eta);
    note(r, max_diff(x, reference_x(y, k, m, n, eta)), tolerance, "x trial " + std::to_string(i));
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_monotonicity(std::size_t trials, std::size_t size, std::uint64_t seed, double slack) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> eta_d(0.01, 2.0), psi_d(0.01, 2.0);
  const GradientOperator op(size, size);
  for (std::size_t i = 0; i < trials; ++i) {
    const double eta = eta_d(rng), psi = psi_d(rng);
    Field x = random_field(size, size, rng), k = random_field(size, size, rng);
    const Field y = random_field(size, size, rng);
    GradientField u = random_gradient_field(size, size, rng);
    const Field m = nonneg_field(size, size, rng), n = nonneg_field(size, size, rng);
    const auto obj = [&] { return hqs_objective(x, y, k, u, m, n, eta, psi, op); };

    const std::string tag = "trial " + std::to_string(i);
    const double start = obj();
    note(r, std::abs(start - naive_hqs_objective(x, y, k, u, m, n, eta, psi)) / std::max(1.0, start), 1e-12,
         tag + " objective vs naive");
    k = k_update(x, u, op);
    const double after_k = obj();
    note(r, std::max(0.0, after_k - start), slack, tag + " k step");
    u = u_update(k, eta, psi, op);
    const double after_u = obj();
    note(r, std::max(0.0, after_u - after_k), slack, tag + " u step");
    x = x_update(y, k, m, n, eta);
    const double after_x = obj();
    note(r, std::max(0.0, after_x - after_u), slack, tag + " x step");
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_zoh(std::size_t trials, std::uint64_t seed, double tolerance, double switch_tolerance) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a_d(-5.0, -0.01), b_d(-1.0, 1.0), dt_d(1e-3, 1.0);
  for (std::size_t i = 0; i < trials; ++i) {
    const double a = a_d(rng), b = b_d(rng), dt = dt_d(rng);
    const auto ref = integrate_zoh(a, b, dt);
    const auto got = nn::zoh_discretize(a, b, dt);
    const double err = std::max(std::abs(got.a_bar - ref.a_bar), std::abs(got.b_bar - ref.b_bar));
    note(r, err, tolerance, "system " + std::to_string(i) + " a=" + std::to_string(a) + " dt=" + std::to_string(dt));

    // Same system through the tensor path (E = N = M = 1).
    const auto d = nn::zoh<double>(Tensor<double>({1, 1}, {a}), Tensor<double>({1, 1}, {dt}),
                                   Tensor<double>({1, 1}, {b}));
    note(r, std::max(std::abs(d.a_bar[0] - ref.a_bar), std::abs(d.b_bar[0] - ref.b_bar)), tolerance,
         "tensor system " + std::to_string(i));
  }
  for (double sign : {-1.0, 1.0}) {
    for (double dt : {1.0, 0.25, 0.01}) {
      const double a = sign * nn::kZohSeriesThreshold / dt;
      const double b = 0.7;
      const auto ex = nn::zoh_discretize_exact(a, b, dt);
      const auto se = nn::zoh_discretize_series(a, b, dt);
      note(r, std::max(std::abs(ex.a_bar - se.a_bar), std::abs(ex.b_bar - se.b_bar)), switch_tolerance,
           "series/exact switch dt=" + std::to_string(dt));
    }
  }
  r.seconds = timer.seconds();
  return r;
}

namespace {

template <std::floating_point T>
double scan_error(std::size_t length, std::size_t e, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1), decay(0.2, 0.99);
  std::vector<double> x(length * e), abar(e * n), bbar(e * n), c(n);
  for (auto& v : x) v = u(rng);
  for (auto& v : abar) v = decay(rng);
  for (auto& v : bbar) v = u(rng);
  for (auto& v : c) v = u(rng);
  // Round the shared parameters to T so both sides see the same numbers.
  for (auto* vec : {&x, &abar, &bbar, &c})
    for (auto& v : *vec) v = static_cast<double>(static_cast<T>(v));

  Tensor<T> tx({length, e}), ta({length, e, n}), tb({length, e, n}), tc({length, n});
  for (std::size_t i = 0; i < x.size(); ++i) tx[i] = static_cast<T>(x[i]);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t j = 0; j < e * n; ++j) {
      ta[t * e * n + j] = static_cast<T>(abar[j]);
      tb[t * e * n + j] = static_cast<T>(bbar[j]);
    }
    for (std::size_t j = 0; j < n; ++j) tc[t * n + j] = static_cast<T>(c[j]);
  }
  const Tensor<T> y = nn::ssm_scan(tx, ta, tb, tc);
  const auto ref = scan_by_convolution(x, length, e, abar, bbar, c, n);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(static_cast<double>(y[i]) - ref[i]));
  return err;
}

}  // namespace

CheckResult check_scan_convolution(std::size_t max_length, std::uint64_t seed, double tolerance) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t len : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{16}, std::size_t{33}, max_length}) {
    if (len > max_length) continue;
    note(r, scan_error<float>(len, 3, 4, rng), tolerance, "float length " + std::to_string(len));
    note(r, scan_error<double>(len, 3, 4, rng), tolerance, "double length " + std::to_string(len));
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_gradients(std::uint64_t seed, std::size_t coords_per_tensor) {
  Timer timer;
  CheckResult r;
  std::ostringstream failures;
  const auto absorb = [&](const GradcheckReport& rep, const GradcheckOptions& opts, const char* precision) {
    r.trials += rep.checked;
    r.worst = std::max(r.worst, rep.worst / opts.tolerance);
    if (!rep.passed) {
      r.passed = false;
      failures << precision << ' ' << rep.name << " rel " << rep.worst << " at " << rep.detail << "; ";
    }
  };
  auto of = default_gradcheck_options<float>();
  auto od = default_gradcheck_options<double>();
  of.coords_per_tensor = od.coords_per_tensor = coords_per_tensor;
  for (nn::Primitive p : nn::all_primitives()) {
    absorb(check_primitive<float>(p, seed, of), of, "f32");
    absorb(check_primitive<double>(p, seed, od), od, "f64");
  }
  absorb(check_primitive<float>(nn::Primitive::zoh, seed, of, true), of, "f32");
  absorb(check_primitive<double>(nn::Primitive::zoh, seed, od, true), od, "f64");
  for (const auto& rep : check_model<float>(gradcheck_config(), seed, of)) absorb(rep, of, "f32 model");
  for (const auto& rep : check_model<double>(gradcheck_config(), seed, od)) absorb(rep, od, "f64 model");
  r.detail = failures.str();
  r.seconds = timer.seconds();
  return r;
}

DfmParams<float> jittered_params(const DfmConfig& cfg, std::uint64_t seed, double amplitude) {
  auto params = DfmParams<float>::init(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> d(-amplitude, amplitude);
  params.for_each([&](const std::string&, Tensor<float>& t) {
    for (auto& v : t.storage()) v += static_cast<float>(d(rng));
  });
  return params;
}

CheckResult check_degeneracy(const DfmParams<float>& params, const NoiseSchedule& sched, std::size_t stacks,
                             std::size_t size, std::uint64_t seed) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < stacks; ++i) {
    const auto img = [&] { return NormalizedImage(random_field(size, size, rng).cast<float>()); };
    const NormalizedImage a = img(), b = img();
    const NormalizedImage zero(Grid<float>(size, size, 0.0f));
    const std::uint64_t run_seed = rng();
    const FusionResult two = fuse(FusionRun{{a, b, std::nullopt}, sched, &params, EMConfig{}, run_seed, false});
    const FusionResult three = fuse(FusionRun{{a, b, zero}, sched, &params, EMConfig{}, run_seed, false});
    const auto& g2 = two.fused.grid().storage();
    const auto& g3 = three.fused.grid().storage();
    const bool same = g2.size() == g3.size() && std::memcmp(g2.data(), g3.data(), g2.size() * sizeof(float)) == 0;
    std::size_t differing = 0;
    for (std::size_t k = 0; k < std::min(g2.size(), g3.size()); ++k) differing += g2[k] != g3[k];
    note(r, same ? 0.0 : static_cast<double>(std::max<std::size_t>(differing, 1)), 0.0,
         "stack " + std::to_string(i) + ": " + std::to_string(differing) + " pixels differ");
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_perfect_inversion(std::size_t steps, std::uint64_t seed, double step_tolerance,
                                    double chain_tolerance) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto noise = [&](std::size_t h, std::size_t w) {
    Field z(h, w);
    for (auto& v : z.storage()) v = normal(rng);
    return z;
  };
  for (ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::scaled_linear, ScheduleKind::cosine}) {
    const NoiseSchedule sched(kind, steps);
    const std::string name(to_string(kind));
    const Field f0 = random_field(16, 16, rng);
    for (std::size_t t = 0; t < steps; ++t) {
      const Field z = noise(16, 16);
      const Field ft = forward_perturb(f0, t, z, sched);
      note(r, max_diff(estimate_f0(ft, z, t, sched), f0), step_tolerance, name + " step " + std::to_string(t));
      // Float instantiation: rounding of f_t is amplified by 1/sqrt(abar_t), so
      // the bound is a rounding bound rather than step_tolerance.
      const Grid<float> ff = forward_perturb(f0.cast<float>(), t, z.cast<float>(), sched);
      double zmax = 0.0;
      for (double v : z.storage()) zmax = std::max(zmax, std::abs(v));
      const double float_bound =
          8.0 * std::numeric_limits<float>::epsilon() * (1.0 + zmax) / std::sqrt(sched.alpha_bar(t));
      note(r, max_diff(estimate_f0(ff, z.cast<float>(), t, sched).cast<double>(), f0), float_bound,
           name + " float step " + std::to_string(t), false);
    }
    // Reverse chain with the exact noise of the current state and z = 0.
    Field f = forward_perturb(f0, steps - 1, noise(16, 16), sched);
    const Field zero(16, 16);
    for (std::size_t t = steps; t-- > 0;) {
      Field eps(16, 16);
      const double a = std::sqrt(sched.alpha_bar(t)), b = std::sqrt(1.0 - sched.alpha_bar(t));
      for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (f[i] - a * f0[i]) / b;
      const Field f_hat = estimate_f0(f, eps, t, sched);
      f = t == 0 ? f_hat : posterior_step(f, f_hat, t, zero, sched);
    }
    note(r, max_diff(f, f0), chain_tolerance, name + " reverse chain");
  }
  r.seconds = timer.seconds();
  return r;
}

CheckResult check_metrics(std::size_t trials, std::size_t size, std::uint64_t seed, double tolerance) {
  Timer timer;
  CheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t nsrc = 2 + i % 2;
    const Grid<double> f = random_field(size, size, rng, 0.0, 1.0);
    std::vector<Grid<double>> src;
    for (std::size_t s = 0; s < nsrc; ++s) {
      // Sources correlated with the fused image so the pairwise metrics are non-trivial.
      Grid<double> g = random_field(size, size, rng, 0.0, 1.0);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::clamp(0.6 * f[k] + 0.4 * g[k], 0.0, 1.0);
      src.push_back(std::move(g));
    }
    const std::string tag = "instance " + std::to_string(i) + " ";
    const auto cmp = [&](Metric m, double naive) {
      note(r, std::abs(compute_metric(m, f, src) - naive), tolerance, tag + std::string(metric_name(m)));
    };
    cmp(Metric::en, naive_entropy(f));
    cmp(Metric::sd, naive_sd(f));
    cmp(Metric::psnr, naive_psnr(f, src));
    cmp(Metric::ssim, naive_ssim(f, src));
    cmp(Metric::mi, naive_mi(f, src));
    cmp(Metric::cc, naive_cc(f, src));
    cmp(Metric::scd, naive_scd(f, src));
    cmp(Metric::qncie, naive_qncie(f, src));

    // Identity cases must hold exactly.
    const std::vector<Grid<double>> self{f};
    note(r, std::abs(compute_metric(Metric::ssim, f, self) - 1.0), 0.0, tag + "SSIM(x,[x]) != 1");
    note(r, std::abs(compute_metric(Metric::mi, f, self) - compute_metric(Metric::en, f, self)), 0.0,
         tag + "MI(x,[x]) != EN(x)");
    const Grid<double> flat(size, size, std::uniform_real_distribution<double>(0, 1)(rng));
    note(r, std::abs(metrics::standard_deviation(flat)), 0.0, tag + "SD(constant) != 0");
    note(r, std::abs(metrics::entropy(flat)), 0.0, tag + "EN(constant) != 0");
  }
  r.seconds = timer.seconds();
  return r;
}

}  // namespace flexfuse::oracle
