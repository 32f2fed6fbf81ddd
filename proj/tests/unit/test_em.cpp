#include <cmath>

#include "doctest.h"
#include "flexfuse/em.hpp"
#include "flexfuse/error.hpp"
#include "flexfuse/oracles/checks.hpp"
#include "flexfuse/oracles/dense.hpp"
#include "test_support.hpp"

using namespace flexfuse;
using flexfuse::testing::max_abs_diff;

namespace {

NormalizedImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return NormalizedImage(flexfuse::testing::uniform_grid<float>(h, w, rng));
}

Field constant(std::size_t h, std::size_t w, double v) { return Field(h, w, v); }

double inner(const Field& a, const Field& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("gradient operator: periodic forward differences") {
  Field x(2, 3, std::vector<double>{1, 2, 4, 8, 16, 32});
  const GradientOperator op(2, 3);
  const GradientField g = op.apply(x);
  CHECK(g.h(0, 0) == 1.0);
  CHECK(g.h(0, 2) == -3.0);  // wraps to column 0
  CHECK(g.v(0, 1) == 14.0);
  CHECK(g.v(1, 1) == -14.0);
}

TEST_CASE("gradient operator: adjoint is the transpose and composes to the periodic Laplacian") {
  std::mt19937_64 rng(3);
  const std::size_t h = 7, w = 10;
  const GradientOperator op(h, w);
  const Field x = oracle::random_field(h, w, rng);
  const GradientField u = oracle::random_gradient_field(h, w, rng);
  const GradientField gx = op.apply(x);
  const double lhs = inner(gx.h, u.h) + inner(gx.v, u.v);
  const double rhs = inner(x, op.adjoint(u));
  CHECK(std::abs(lhs - rhs) < 1e-12);

  const Field lap = op.adjoint(op.apply(x));
  Field stencil(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      stencil(r, c) = 4.0 * x(r, c) - x((r + 1) % h, c) - x((r + h - 1) % h, c) - x(r, (c + 1) % w) -
                      x(r, (c + w - 1) % w);
  CHECK(max_abs_diff(lap, stencil) < 1e-12);
}

TEST_CASE("gradient operator: cached transfer equals the DFT of the difference kernels") {
  const std::size_t h = 6, w = 9;
  const GradientOperator op(h, w);
  Field delta(h, w);
  delta(0, 0) = 1.0;
  const GradientField impulse = op.apply(delta);
  const auto kh = op.fft(impulse.h);
  const auto kv = op.fft(impulse.v);
  double worst = 0.0;
  for (std::size_t i = 0; i < kh.size(); ++i) {
    worst = std::max(worst, std::abs(kh[i] - op.transfer_h()[i]));
    worst = std::max(worst, std::abs(kv[i] - op.transfer_v()[i]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("gradient operator: fft round trip") {
  std::mt19937_64 rng(5);
  const GradientOperator op(8, 12);
  const Field x = oracle::random_field(8, 12, rng);
  double imag = 1.0;
  const Field back = op.ifft(op.fft(x), &imag);
  CHECK(max_abs_diff(back, x) < 1e-14);
  CHECK(imag < 1e-14);
}

// ---- substitution ---------------------------------------------------------------

TEST_CASE("build_substitution") {
  std::mt19937_64 rng(11);
  const std::size_t h = 5, w = 6;
  SourceStack two{random_image(h, w, rng), random_image(h, w, rng), std::nullopt};

  SUBCASE("absent img3 behaves as a zero field") {
    SourceStack three = two;
    three.img3 = NormalizedImage(Grid<float>(h, w));
    const Field f = oracle::random_field(h, w, rng);
    const auto a = build_substitution(f, to_fields(two));
    const auto b = build_substitution(f, to_fields(three));
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(to_fields(two).n_modal == 2);
    CHECK(to_fields(three).n_modal == 3);
  }
  SUBCASE("identical img1 and img2 give y = 0") {
    SourceStack s{two.img1, two.img1, std::nullopt};
    const auto [x0, y] = build_substitution(oracle::random_field(h, w, rng), to_fields(s));
    CHECK(y == Field(h, w));
  }
  SUBCASE("f~ = img2 + img3 gives x0 = 0") {
    SourceStack s = two;
    s.img3 = random_image(h, w, rng);
    const SourceFields src = to_fields(s);
    Field f(h, w);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = src.img2[i] + src.img3[i];
    const auto [x0, y] = build_substitution(f, src);
    CHECK(max_abs_diff(x0, Field(h, w)) == 0.0);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(build_substitution(Field(h, w + 1), to_fields(two)), InvalidArgument);
    SourceStack bad{two.img1, random_image(h + 1, w, rng), std::nullopt};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  }
}

// ---- e-step ---------------------------------------------------------------------

TEST_CASE("e_step examples") {
  const Field y = constant(3, 3, 1.0), x = constant(3, 3, 0.0);
  for (const auto form : {ExpectationForm::sqrt_abs, ExpectationForm::squared}) {
    CAPTURE(to_string(form));
    const Expectations e = e_step(x, y, 2.0, 1.0, form);
    CHECK(e.m_tilde(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(e.m(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(e.n_tilde == Field(3, 3));
    CHECK(e.n == Field(3, 3));
  }
}

TEST_CASE("e_step homogeneity in the residual") {
  std::mt19937_64 rng(17);
  const Field x = oracle::random_field(4, 4, rng), y = oracle::random_field(4, 4, rng);
  const double s = 3.0;
  Field xs = x, ys = y;
  for (auto& v : xs.storage()) v *= s;
  for (auto& v : ys.storage()) v *= s;
  const auto a1 = e_step(x, y, 0.7, 1.3, ExpectationForm::sqrt_abs);
  const auto b1 = e_step(xs, ys, 0.7, 1.3, ExpectationForm::sqrt_abs);
  const auto a2 = e_step(x, y, 0.7, 1.3, ExpectationForm::squared);
  const auto b2 = e_step(xs, ys, 0.7, 1.3, ExpectationForm::squared);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(b1.m_tilde[i] == doctest::Approx(s * a1.m_tilde[i]).epsilon(1e-12));
    CHECK(b2.m_tilde[i] == doctest::Approx(s * s * a2.m_tilde[i]).epsilon(1e-12));
    CHECK(b1.n_tilde[i] == doctest::Approx(s * a1.n_tilde[i]).epsilon(1e-12));
    CHECK(b1.m[i] == doctest::Approx(std::sqrt(b1.m_tilde[i])).epsilon(1e-15));
  }
}

TEST_CASE("e_step rejects non-positive scales") {
  const Field z(2, 2);
  CHECK_THROWS_AS(e_step(z, z, 0.0, 1.0, ExpectationForm::sqrt_abs), InvalidArgument);
  CHECK_THROWS_AS(e_step(z, z, 1.0, -1.0, ExpectationForm::sqrt_abs), InvalidArgument);
  CHECK_THROWS_AS(e_step(z, Field(2, 3), 1.0, 1.0, ExpectationForm::sqrt_abs), InvalidArgument);
}

TEST_CASE("expectation form names") {
  CHECK(parse_expectation_form("sqrt_abs") == ExpectationForm::sqrt_abs);
  CHECK(parse_expectation_form("squared") == ExpectationForm::squared);
  CHECK_THROWS_AS(parse_expectation_form("cubic"), InvalidArgument);
  CHECK(to_string(ExpectationForm::squared) == "squared");
}

// ---- k-update -------------------------------------------------------------------

TEST_CASE("k_update fixed points") {
  std::mt19937_64 rng(23);
  const GradientOperator op(9, 7);
  SUBCASE("u = grad x returns x") {
    const Field x = oracle::random_field(9, 7, rng);
    CHECK(max_abs_diff(k_update(x, op.apply(x), op), x) < 1e-12);
  }
  SUBCASE("u = 0 with constant x returns x") {
    const Field x = constant(9, 7, 0.37);
    const GradientField u{Field(9, 7), Field(9, 7)};
    CHECK(max_abs_diff(k_update(x, u, op), x) < 1e-12);
  }
}

TEST_CASE("k_update matches the dense periodic solve") {
  const auto r = oracle::check_fft_solver(10, {8, 16}, 31);
  CHECK_MESSAGE(r.passed, r.detail);
  CHECK(r.worst < 1e-8);
  CHECK(r.trials == 20);
}

TEST_CASE("k_update on non-square extents matches the dense solve") {
  std::mt19937_64 rng(37);
  const GradientOperator op(5, 8);
  const Field x = oracle::random_field(5, 8, rng);
  const GradientField u = oracle::random_gradient_field(5, 8, rng);
  CHECK(max_abs_diff(k_update(x, u, op), oracle::dense_k_solve(x, u)) < 1e-10);
}

TEST_CASE("a corrupted transfer cache is caught by the dense oracle") {
  const auto r = oracle::check_fft_solver(3, {8}, 41, 1e-8, 1e-3);
  CHECK_FALSE(r.passed);
}

TEST_CASE("k_update is shift-equivariant") {
  std::mt19937_64 rng(43);
  const std::size_t h = 8, w = 8;
  const GradientOperator op(h, w);
  const Field x = oracle::random_field(h, w, rng);
  const GradientField u = oracle::random_gradient_field(h, w, rng);
  const auto shift = [&](const Field& f) {
    Field s(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) s((r + 3) % h, (c + 5) % w) = f(r, c);
    return s;
  };
  const Field a = shift(k_update(x, u, op));
  const Field b = k_update(shift(x), GradientField{shift(u.h), shift(u.v)}, op);
  CHECK(max_abs_diff(a, b) < 1e-10);
}

TEST_CASE("k_update rejects fields of the wrong extent") {
  const GradientOperator op(4, 4);
  const GradientField u{Field(4, 4), Field(4, 4)};
  CHECK_THROWS_AS(k_update(Field(4, 5), u, op), InvalidArgument);
}

// ---- u- and x-updates -----------------------------------------------------------

TEST_CASE("u_update shrinkage factor") {
  const GradientOperator op(2, 2);
  const Field k(2, 2, std::vector<double>{0.0, 1.0, 0.0, 1.0});
  const GradientField u = u_update(k, 0.1, 0.5, op);
  CHECK(u.h(0, 0) == doctest::Approx(0.1 / 1.1).epsilon(1e-15));
  CHECK(u.h(0, 0) == doctest::Approx(0.090909).epsilon(1e-6));
  const GradientField lim = u_update(k, 0.1, 1e-12, op);
  CHECK(lim.h(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("x_update limits") {
  std::mt19937_64 rng(47);
  const Field y = oracle::random_field(4, 4, rng), k = oracle::random_field(4, 4, rng);
  const Field zero(4, 4);
  CHECK(max_abs_diff(x_update(y, k, zero, zero, 0.1), k) < 1e-15);
  const Field one = constant(4, 4, 1.0);
  CHECK(max_abs_diff(x_update(y, k, one, zero, 1e-12), y) < 1e-10);
  CHECK_THROWS_AS(x_update(y, Field(4, 3), zero, zero, 0.1), InvalidArgument);
}

TEST_CASE("u_update and x_update match per-element quadratic vertices") {
  const auto r = oracle::check_subproblems(20, 8, 53);
  CHECK_MESSAGE(r.passed, r.detail);
  CHECK(r.worst < 1e-10);
}

// ---- hyperparameters ------------------------------------------------------------

TEST_CASE("update_hyperparams examples") {
  const auto [g1, r1] = update_hyperparams(constant(2, 2, 1.0), constant(2, 2, 1.0));
  CHECK(g1 == doctest::Approx(1.0));
  CHECK(r1 == doctest::Approx(1.0));
  const auto [g0, r0] = update_hyperparams(Field(2, 2), Field(2, 2));
  CHECK(g0 == doctest::Approx(kScaleMax));
  CHECK(r0 == doctest::Approx(kScaleMax));
  const auto [g2, r2] = update_hyperparams(Field(1, 2, std::vector<double>{1.0, 4.0}), constant(1, 2, 2.0));
  CHECK(g2 == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(r2 == doctest::Approx(0.5).epsilon(1e-15));
  const auto [gl, rl] = update_hyperparams(constant(1, 1, 1e12), constant(1, 1, 1e12));
  CHECK(gl == kScaleMin);
  CHECK(rl == kScaleMin);
}

// ---- objective and full correction ----------------------------------------------

TEST_CASE("hqs_objective") {
  std::mt19937_64 rng(59);
  const std::size_t h = 6, w = 5;
  const GradientOperator op(h, w);
  const Field zero(h, w);
  const GradientField uz{zero, zero};
  CHECK(hqs_objective(zero, zero, zero, uz, zero, zero, 0.1, 0.5, op) == 0.0);

  const Field x = oracle::random_field(h, w, rng), y = oracle::random_field(h, w, rng);
  const Field k = oracle::random_field(h, w, rng);
  const GradientField u = oracle::random_gradient_field(h, w, rng);
  const Field m = oracle::random_field(h, w, rng, 0.0, 2.0), n = oracle::random_field(h, w, rng, 0.0, 2.0);
  const double j = hqs_objective(x, y, k, u, m, n, 0.1, 0.5, op);
  CHECK(j == doctest::Approx(oracle::naive_hqs_objective(x, y, k, u, m, n, 0.1, 0.5)).epsilon(1e-12));

  const double s = 2.5;
  const auto scaled = [s](Field f) {
    for (auto& v : f.storage()) v *= s;
    return f;
  };
  const double js = hqs_objective(scaled(x), scaled(y), scaled(k), GradientField{scaled(u.h), scaled(u.v)}, m, n,
                                  0.1, 0.5, op);
  CHECK(js == doctest::Approx(s * s * j).epsilon(1e-12));
}

TEST_CASE("coordinate steps never raise the objective") {
  const auto r = oracle::check_monotonicity(30, 8, 61);
  CHECK_MESSAGE(r.passed, r.detail);
}

TEST_CASE("em_correct on all-zero inputs is a fixed point") {
  const std::size_t h = 8, w = 8;
  const GradientOperator op(h, w);
  const NormalizedImage z(Grid<float>(h, w));
  const SourceFields src = to_fields(SourceStack{z, z, std::nullopt});
  const EMConfig cfg;
  EMState state = EMState::fresh(cfg);
  const Field f_hat = em_correct(Field(h, w), src, cfg, state, op);
  CHECK(f_hat == Field(h, w));
  CHECK(state.objective == 0.0);
  CHECK(std::isfinite(state.gamma));
  CHECK(state.gamma == kScaleMax);
}

TEST_CASE("em_correct: two-modal equals three-modal with a zero third source") {
  std::mt19937_64 rng(67);
  const std::size_t h = 8, w = 8;
  const GradientOperator op(h, w);
  SourceStack two{random_image(h, w, rng), random_image(h, w, rng), std::nullopt};
  SourceStack three = two;
  three.img3 = NormalizedImage(Grid<float>(h, w));
  const EMConfig cfg;
  EMState s2 = EMState::fresh(cfg), s3 = EMState::fresh(cfg);
  const SourceFields f2 = to_fields(two), f3 = to_fields(three);
  for (int step = 0; step < 5; ++step) {
    const Field f = oracle::random_field(h, w, rng);
    CHECK(em_correct(f, f2, cfg, s2, op) == em_correct(f, f3, cfg, s3, op));
    CHECK(s2.gamma == s3.gamma);
    CHECK(s2.rho == s3.rho);
  }
}

TEST_CASE("em_correct stays finite on bounded inputs") {
  std::mt19937_64 rng(71);
  const std::size_t h = 16, w = 16;
  const GradientOperator op(h, w);
  for (const auto form : {ExpectationForm::sqrt_abs, ExpectationForm::squared}) {
    EMConfig cfg;
    cfg.form = form;
    cfg.inner_sweeps = 3;
    SourceStack stack{random_image(h, w, rng), random_image(h, w, rng), random_image(h, w, rng)};
    const SourceFields src = to_fields(stack);
    EMState state = EMState::fresh(cfg);
    for (int step = 0; step < 20; ++step) {
      const Field f_hat = em_correct(oracle::random_field(h, w, rng, -2.0, 2.0), src, cfg, state, op);
      REQUIRE(all_finite(f_hat));
      CHECK(state.gamma >= kScaleMin);
      CHECK(state.gamma <= kScaleMax);
      CHECK(std::isfinite(state.objective));
    }
  }
}

TEST_CASE("EMConfig validation") {
  EMConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.eta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = EMConfig{};
  cfg.inner_sweeps = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = EMConfig{};
  cfg.gamma0 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
