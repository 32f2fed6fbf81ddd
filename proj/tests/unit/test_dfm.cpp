#include <chrono>
#include <cmath>

#include "doctest.h"
#include "flexfuse/dfm.hpp"
#include "flexfuse/oracles/checks.hpp"
#include "flexfuse/primitives.hpp"
#include "test_support.hpp"

using namespace flexfuse;

namespace {

template <std::floating_point T>
Tensor<T> uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

DfmConfig tiny() { return {2, 8, 1, 2, 8, 4, 4}; }

}  // namespace

// ---- zoh ----------------------------------------------------------------------

TEST_CASE("zoh closed-form examples") {
  const auto a = nn::zoh_discretize(-1.0, 1.0, std::log(2.0));
  CHECK(a.a_bar == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.b_bar == doctest::Approx(0.5).epsilon(1e-15));
  const auto b = nn::zoh_discretize(0.0, 1.0, 0.3);
  CHECK(b.a_bar == 1.0);
  CHECK(b.b_bar == doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS_AS(nn::zoh_discretize(-1.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("zoh branches agree at the switch point") {
  for (double a : {-1.0, -0.37, 0.5}) {
    const double delta = nn::kZohSeriesThreshold / std::abs(a);
    const auto e = nn::zoh_discretize_exact(a, 0.8, delta);
    const auto s = nn::zoh_discretize_series(a, 0.8, delta);
    CHECK(std::abs(e.b_bar - s.b_bar) < 1e-10);
    CHECK(e.a_bar == s.a_bar);
  }
}

TEST_CASE("zoh matches ODE integration") {
  const auto r = oracle::check_zoh(50, 4);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("tensor zoh is stable for negative A") {
  std::mt19937_64 rng(7);
  const auto a = uniform_tensor<float>({3, 4}, rng, -3.0, -0.01);
  const auto delta = nn::softplus(uniform_tensor<float>({5, 3}, rng, -6.0, 6.0));
  for (float v : delta.storage()) CHECK(v > 0.0f);
  const auto d = nn::zoh(a, delta, uniform_tensor<float>({5, 4}, rng));
  for (float v : d.a_bar.storage()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

// ---- scan ---------------------------------------------------------------------

TEST_CASE("scan unrolls the recurrence") {
  const Tensor<double> x({3, 1}, 1.0), abar({3, 1, 1}, 0.5), bbar({3, 1, 1}, 0.5), c({3, 1}, 1.0);
  const auto y = nn::ssm_scan(x, abar, bbar, c);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.75));
  CHECK(y[2] == doctest::Approx(0.875));

  std::mt19937_64 rng(8);
  const auto zeros = nn::ssm_scan(Tensor<double>({6, 2}), uniform_tensor<double>({6, 2, 3}, rng, 0, 1),
                                  uniform_tensor<double>({6, 2, 3}, rng), uniform_tensor<double>({6, 3}, rng));
  for (double v : zeros.storage()) CHECK(v == 0.0);
}

TEST_CASE("scan equals convolution with the unrolled kernel") {
  const auto r = oracle::check_scan_convolution(64, 9);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("scan gradients respect causality") {
  std::mt19937_64 rng(10);
  const std::size_t m = 7, e = 2, n = 3;
  const auto x = uniform_tensor<double>({m, e}, rng);
  const auto abar = uniform_tensor<double>({m, e, n}, rng, 0.2, 0.9);
  const auto bbar = uniform_tensor<double>({m, e, n}, rng);
  const auto c = uniform_tensor<double>({m, n}, rng);
  Tensor<double> states;
  nn::ssm_scan(x, abar, bbar, c, &states);
  for (std::size_t out = 0; out < m; ++out) {
    Tensor<double> dy({m, e});
    for (std::size_t k = 0; k < e; ++k) dy(out, k) = 1.0;
    const auto g = nn::ssm_scan_backward(x, abar, bbar, c, states, dy);
    for (std::size_t j = out + 1; j < m; ++j)
      for (std::size_t k = 0; k < e; ++k) CHECK(g.dx(j, k) == 0.0);
  }
}

// ---- linear VJP ---------------------------------------------------------------

TEST_CASE("linear backward is W^T g and g x^T") {
  const Tensor<double> x({1, 2}, std::vector<double>{1.0, 2.0});
  const Tensor<double> w({2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  const Tensor<double> g({1, 2}, std::vector<double>{0.5, -1.0});
  const auto r = nn::linear_backward(x, w, false, g);
  CHECK(r.dx[0] == doctest::Approx(0.5 * 1 - 1.0 * 3));
  CHECK(r.dx[1] == doctest::Approx(0.5 * 2 - 1.0 * 4));
  CHECK(r.dw(0, 0) == doctest::Approx(0.5));
  CHECK(r.dw(0, 1) == doctest::Approx(1.0));
  CHECK(r.dw(1, 0) == doctest::Approx(-1.0));
  CHECK(r.dw(1, 1) == doctest::Approx(-2.0));
}

TEST_CASE("primitive names round-trip and unknown names fail") {
  for (auto p : nn::all_primitives()) CHECK(nn::primitive_from_name(nn::primitive_name(p)) == p);
  CHECK_THROWS_AS(nn::primitive_from_name("conv3d"), InvalidArgument);
}

// ---- patches and embeddings ---------------------------------------------------

TEST_CASE("token counts") {
  const DfmConfig wide{16, 8, 3, 1, 8, 4, 4};
  const auto params = DfmParams<float>::init(wide, 1);
  CHECK(patchify(Tensor<float>({256, 256, 3}), params).rows() == 256);
  CHECK(patchify(Tensor<float>({16, 16, 3}), params).rows() == 1);
  CHECK_THROWS_AS(patchify(Tensor<float>({16, 16, 1}), params), InvalidArgument);
}

TEST_CASE("unpatchify inverts patchify under identity embedding") {
  const DfmConfig cfg{2, 4, 1, 1, 8, 4, 4};
  auto params = DfmParams<double>::zeros(cfg);
  for (std::size_t i = 0; i < 4; ++i) params.embed_w(i, i) = 1.0;
  std::mt19937_64 rng(11);
  const auto img = uniform_tensor<double>({6, 8, 1}, rng);
  auto tokens = patchify(img, params);
  const auto pos = positional_table<double>(3, 4, 4);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] -= pos[i];
  // Adding and removing the positional table costs one rounding per entry.
  const auto back = unpatchify(tokens, 6, 8, cfg);
  REQUIRE(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) < 1e-15);
}

TEST_CASE("patch layout round-trips through assemble and extract") {
  std::mt19937_64 rng(12);
  const auto rows = uniform_tensor<float>({12, 18}, rng);
  const auto img = nn::patch_assemble(rows, 9, 12, 2, 3);
  CHECK(nn::patch_extract(img, 3) == rows);
}

TEST_CASE("default init uses A_k = -(k+1)") {
  const auto params = DfmParams<float>::init(DfmConfig::desk(), 2);
  for (const auto& b : params.blocks)
    for (std::size_t c = 0; c < b.a_log.rows(); ++c)
      for (std::size_t s = 0; s < b.a_log.cols(); ++s)
        CHECK(-std::exp(b.a_log(c, s)) == doctest::Approx(-double(s + 1)).epsilon(1e-6));
}

// ---- blocks -------------------------------------------------------------------

TEST_CASE("zero block weights pass the residual through") {
  const auto params = DfmParams<double>::zeros(tiny());
  std::mt19937_64 rng(13);
  const auto x = uniform_tensor<double>({5, 8}, rng);
  const auto temb = timestep_embedding<double>(3, 8);
  CHECK(dfm_block_forward(x, temb, params.blocks[0]) == x);
}

TEST_CASE("block output at position i ignores tokens after i") {
  std::mt19937_64 rng(14);
  auto params = oracle::jittered_params(tiny(), 14, 0.3).cast<double>();
  const std::size_t m = 9;
  const auto x = uniform_tensor<double>({m, 8}, rng);
  const auto temb = timestep_embedding<double>(17, 8);
  const auto base = dfm_block_forward(x, temb, params.blocks[0]);
  for (std::size_t j = 0; j < m; ++j) {
    auto xp = x;
    for (std::size_t k = 0; k < 8; ++k) xp(j, k) += 0.5;
    const auto out = dfm_block_forward(xp, temb, params.blocks[0]);
    for (std::size_t i = 0; i < m; ++i) {
      bool same = true;
      for (std::size_t k = 0; k < 8; ++k) same = same && out(i, k) == base(i, k);
      if (i < j) CHECK(same);
      if (i == j) CHECK_FALSE(same);
    }
  }
}

TEST_CASE("default init is finite on inputs in [-10, 10]") {
  const auto params = DfmParams<float>::init(DfmConfig::desk(), 15);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = uniform_tensor<float>({16, 16, 1}, rng, -10.0, 10.0);
    const auto out = dfm_forward(img, 50.0, params);
    for (float v : out.eps.storage()) REQUIRE(std::isfinite(v));
    for (float v : out.cov.storage()) REQUIRE(std::isfinite(v));
  }
}

// ---- decoder ------------------------------------------------------------------

TEST_CASE("zero final weights decode to the bias field") {
  auto params = oracle::jittered_params(tiny(), 16, 0.3).cast<double>();
  params.final_w.fill(0.0);
  std::mt19937_64 rng(16);
  for (auto& v : params.final_b.storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto tokens = uniform_tensor<double>({4, 8}, rng);
  const auto out = decode(tokens, timestep_embedding<double>(5, 8), params, 4, 4);
  REQUIRE(out.eps.shape() == Shape{4, 4, 1});
  REQUIRE(out.cov.shape() == Shape{4, 4, 1});
  // Row layout (py, px, channel) over 2c: even entries are noise, odd are covariance.
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      const std::size_t within = (r % 2) * 2 + (c % 2);
      CHECK(out.eps[r * 4 + c] == params.final_b[2 * within]);
      CHECK(out.cov[r * 4 + c] == params.final_b[2 * within + 1]);
    }
}

TEST_CASE("decoder halves are independent and linear in the final layer") {
  auto params = oracle::jittered_params(tiny(), 17, 0.3).cast<double>();
  params.final_b.fill(0.0);
  std::mt19937_64 rng(17);
  const auto tokens = uniform_tensor<double>({4, 8}, rng);
  const auto temb = timestep_embedding<double>(9, 8);
  const auto base = decode(tokens, temb, params, 4, 4);

  auto no_cov = params;
  for (std::size_t row = 1; row < no_cov.final_w.rows(); row += 2)
    for (std::size_t k = 0; k < no_cov.final_w.cols(); ++k) no_cov.final_w(row, k) = 0.0;
  const auto eps_only = decode(tokens, temb, no_cov, 4, 4);
  CHECK(eps_only.eps == base.eps);
  for (double v : eps_only.cov.storage()) CHECK(v == 0.0);

  auto p1 = params, p2 = params;
  const auto w2 = uniform_tensor<double>(params.final_w.shape(), rng);
  p2.final_w = w2;
  auto p12 = params;
  for (std::size_t i = 0; i < w2.size(); ++i) p12.final_w[i] += w2[i];
  const auto a = decode(tokens, temb, p1, 4, 4), b = decode(tokens, temb, p2, 4, 4);
  const auto ab = decode(tokens, temb, p12, 4, 4);
  for (std::size_t i = 0; i < ab.eps.size(); ++i) {
    CHECK(ab.eps[i] == doctest::Approx(a.eps[i] + b.eps[i]).epsilon(1e-12));
    CHECK(ab.cov[i] == doctest::Approx(a.cov[i] + b.cov[i]).epsilon(1e-12));
  }
}

// ---- denoise ------------------------------------------------------------------

TEST_CASE("denoise is deterministic and sensitive to t") {
  const auto params = oracle::jittered_params(DfmConfig::desk(), 18);
  std::mt19937_64 rng(18);
  const auto ft = testing::uniform_grid<float>(16, 16, rng);
  const auto a = denoise(ft, 40, params), b = denoise(ft, 40, params);
  CHECK(a == b);
  CHECK_FALSE(denoise(ft, 41, params) == a);
  CHECK_THROWS_AS(denoise(testing::uniform_grid<float>(15, 16, rng), 3, params), InvalidArgument);
}

TEST_CASE("forward time grows near-linearly with token count") {
  const auto params = DfmParams<float>::init(DfmConfig::desk(), 19);
  std::mt19937_64 rng(19);
  const auto best_of = [&](std::size_t h, std::size_t w) {
    const auto ft = testing::uniform_grid<float>(h, w, rng);
    double best = 1e9;
    for (int k = 0; k < 5; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = denoise(ft, 10, params);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      REQUIRE(out.rows() == h);
    }
    return best;
  };
  const double one = best_of(32, 32), two = best_of(32, 64);
  INFO("64 tokens " << one << " s, 128 tokens " << two << " s");
  CHECK(two <= 2.5 * one);
}
