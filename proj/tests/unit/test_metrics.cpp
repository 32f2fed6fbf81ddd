#include <cmath>

#include "doctest.h"
#include "flexfuse/error.hpp"
#include "flexfuse/metrics.hpp"
#include "flexfuse/oracles/checks.hpp"
#include "flexfuse/oracles/dense.hpp"
#include "test_support.hpp"

using namespace flexfuse;

namespace {

Grid<double> random01(std::size_t n, std::mt19937_64& rng) { return oracle::random_field(n, n, rng, 0.0, 1.0); }

// Closed-form patterns so the golden reports do not depend on RNG distributions.
Grid<double> pattern(std::size_t n, int a, int b, int mod) {
  Grid<double> g(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      g(r, c) = static_cast<double>((static_cast<int>(r) * a + static_cast<int>(c) * b) % mod) / (mod - 1);
  return g;
}

ImageBuffer buffer(const Grid<double>& g) { return ImageBuffer::from_grid(g.cast<float>()); }

std::vector<MetricReport> golden_reports() {
  const ImageBuffer f = buffer(pattern(16, 7, 3, 16));
  const ImageBuffer s1 = buffer(pattern(16, 5, 1, 13));
  const ImageBuffer s2 = buffer(pattern(16, 1, 9, 11));
  const ImageBuffer s3 = buffer(pattern(16, 2, 2, 7));
  const std::vector<ImageBuffer> two{s1, s2}, three{s1, s2, s3};
  return {evaluate(f, two, "method_a", {"ir", "vis"}), evaluate(f, three, "method_b", {"ir", "vis", "nir"})};
}

}  // namespace

TEST_CASE("metric names round-trip in a stable order") {
  std::vector<std::string> names;
  for (Metric m : kAllMetrics) {
    names.emplace_back(metric_name(m));
    CHECK(parse_metric(metric_name(m)) == m);
  }
  CHECK(names == std::vector<std::string>{"EN", "SD", "PSNR", "SSIM", "MI", "CC", "SCD", "Q_NCIE"});
  CHECK_THROWS_AS(parse_metric("VIF"), InvalidArgument);
}

TEST_CASE("identity cases") {
  std::mt19937_64 rng(1);
  const Grid<double> x = random01(16, rng);
  const std::vector<Grid<double>> self{x};
  CHECK(compute_metric(Metric::ssim, x, self) == 1.0);
  CHECK(compute_metric(Metric::mi, x, self) == compute_metric(Metric::en, x, self));
  CHECK(compute_metric(Metric::psnr, x, self) == metrics::kPsnrCap);
  CHECK(compute_metric(Metric::cc, x, self) == doctest::Approx(1.0).epsilon(1e-14));
  const Grid<double> flat(16, 16, 0.3);
  CHECK(metrics::entropy(flat) == 0.0);
  CHECK(metrics::standard_deviation(flat) == 0.0);
  CHECK(metrics::correlation(flat, x) == 0.0);
}

TEST_CASE("simple closed forms") {
  Grid<double> half(2, 2, std::vector<double>{0.0, 0.0, 1.0, 1.0});
  CHECK(metrics::entropy(half) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(metrics::standard_deviation(half) == doctest::Approx(127.5).epsilon(1e-15));
  const Grid<double> zero(2, 2);
  // MSE = 255^2 / 2 -> 10 log10(2)
  CHECK(metrics::psnr(half, zero) == doctest::Approx(10.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(metrics::bin_of(0.0) == 0);
  CHECK(metrics::bin_of(1.0) == 255);
  CHECK(metrics::bin_of(0.5) == 128);
  CHECK(metrics::bin_of(-0.1) == 0);
}

TEST_CASE("core metrics agree with the naive references") {
  const auto r = oracle::check_metrics(50, 16, 2024);
  CHECK_MESSAGE(r.passed, r.detail);
  CHECK(r.worst <= 1e-6);
}

TEST_CASE("ranges on random instances") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Grid<double> f = random01(16, rng);
    std::vector<Grid<double>> src{random01(16, rng), random01(16, rng)};
    for (auto& v : src[0].storage()) v = 0.5 * v + 0.25;
    const double ssim = compute_metric(Metric::ssim, f, src);
    CHECK(ssim >= -1.0);
    CHECK(ssim <= 1.0);
    const double en = metrics::entropy(f);
    CHECK(en >= 0.0);
    CHECK(en <= 8.0);
    CHECK(compute_metric(Metric::mi, f, src) >= 0.0);
    CHECK(std::abs(compute_metric(Metric::cc, f, src)) <= 1.0);
    const double q = compute_metric(Metric::qncie, f, src);
    CHECK(q >= 0.0);
    CHECK(q <= 1.0 + 1e-12);
  }
}

TEST_CASE("Q_NCIE lies in [1 - log_b K, 1]") {
  // Equal eigenvalues give the floor 1 - ln K / ln b; with K = 3 variables and
  // b = 256 bins (a 256x256 image) that floor is 0.80.
  std::mt19937_64 rng(5);
  for (std::size_t n : {16, 256}) {
    CAPTURE(n);
    const double floor = 1.0 - std::log(3.0) / std::log(static_cast<double>(metrics::ncc_bins(n * n)));
    for (int i = 0; i < (n == 16 ? 20 : 2); ++i) {
      const Grid<double> f = random01(n, rng);
      const std::vector<Grid<double>> src{random01(n, rng), random01(n, rng)};
      const double q = metrics::qncie(f, src);
      CHECK(q >= floor - 1e-12);
      CHECK(q <= 1.0 + 1e-12);
      if (n == 256) CHECK(q >= 0.8 - 1e-12);
    }
  }
  CHECK(metrics::ncc_bins(256 * 256) == 256);
  const Grid<double> f = random01(16, rng);
  const std::vector<Grid<double>> same{f, f};
  CHECK(metrics::qncie(f, same) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mutual information is symmetric") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    const Grid<double> a = random01(16, rng), b = random01(16, rng);
    CHECK(std::abs(metrics::mutual_information(a, b) - metrics::mutual_information(b, a)) <= 1e-12);
  }
}

TEST_CASE("SSIM decreases as noise grows") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Grid<double> x = random01(32, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Grid<double> z(32, 32);
    for (auto& v : z.storage()) v = normal(rng);
    double previous = 1.0;
    for (double sd : {0.01, 0.05, 0.1}) {
      Grid<double> noisy = x;
      for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += sd * z[i];
      const double s = metrics::ssim(noisy, x);
      CHECK(s < previous);
      previous = s;
    }
  }
}

TEST_CASE("metrics are consistent on shifted crops") {
  // Translating every operand and cropping the same window gives identical values.
  std::mt19937_64 rng(11);
  const std::size_t big = 24, n = 16, dy = 3, dx = 5;
  const std::vector<Grid<double>> full{random01(big, rng), random01(big, rng), random01(big, rng)};
  const auto window = [&](const Grid<double>& g, std::size_t r0, std::size_t c0) {
    Grid<double> out(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) out(r, c) = g(r0 + r, c0 + c);
    return out;
  };
  const auto shifted = [&](const Grid<double>& g) {
    Grid<double> out(big, big, 0.5);  // shared constant border
    for (std::size_t r = 0; r + dy < big; ++r)
      for (std::size_t c = 0; c + dx < big; ++c) out(r + dy, c + dx) = g(r, c);
    return out;
  };
  for (Metric m : kAllMetrics) {
    CAPTURE(metric_name(m));
    const std::vector<Grid<double>> a{window(full[1], 2, 2), window(full[2], 2, 2)};
    const std::vector<Grid<double>> b{window(shifted(full[1]), 2 + dy, 2 + dx),
                                      window(shifted(full[2]), 2 + dy, 2 + dx)};
    CHECK(compute_metric(m, window(full[0], 2, 2), a) ==
          compute_metric(m, window(shifted(full[0]), 2 + dy, 2 + dx), b));
  }
}

TEST_CASE("evaluate on an identical triple") {
  std::mt19937_64 rng(13);
  const ImageBuffer x = buffer(random01(16, rng));
  const std::vector<ImageBuffer> src{x, x};
  const MetricReport r = evaluate(x, src, "x");
  CHECK(r.n_modal == 2);
  CHECK(r.source_ids == std::vector<std::string>{"src1", "src2"});
  CHECK(r.value(Metric::ssim) == 1.0);
  CHECK(r.value(Metric::cc) == doctest::Approx(1.0).epsilon(1e-14));
  const Grid<double> gx(x.height(), x.width(), std::vector<double>(x.pixels().begin(), x.pixels().end()));
  CHECK(r.value(Metric::sd) == metrics::standard_deviation(gx));
  REQUIRE(r.ssim.size() == 2);
  CHECK(r.ssim[0] == 1.0);
  CHECK(r.psnr[1] == metrics::kPsnrCap);
}

TEST_CASE("errors") {
  const Grid<double> a(16, 16), b(16, 15);
  const std::vector<Grid<double>> one{a};
  const std::vector<Grid<double>> mismatched{a, b};
  CHECK_THROWS_AS(metrics::psnr(a, b), InvalidArgument);
  CHECK_THROWS_AS(compute_metric(Metric::cc, a, mismatched), InvalidArgument);
  CHECK_THROWS_AS(compute_metric(Metric::scd, a, one), InvalidArgument);
  CHECK_THROWS_AS(metrics::ssim(Grid<double>(8, 8), Grid<double>(8, 8)), InvalidArgument);

  const ImageBuffer x(16, 16, 1);
  const std::vector<ImageBuffer> single{x};
  CHECK_THROWS_AS(evaluate(x, single), InvalidArgument);
  const std::vector<ImageBuffer> rgb{ImageBuffer(16, 16, 3), x};
  CHECK_THROWS_AS(evaluate(x, rgb), InvalidArgument);
}

TEST_CASE("report formats match the golden snapshots") {
  const auto reports = golden_reports();
  std::string csv = report_csv_header() + "\n";
  for (const auto& r : reports) csv += report_csv_row(r) + "\n";
  CHECK(flexfuse::testing::matches_golden("report.csv", csv));
  CHECK(flexfuse::testing::matches_golden("report.json", report_json(reports) + "\n"));
  CHECK(flexfuse::testing::matches_golden("report_table.txt", report_table(reports)));
  CHECK(report_csv_header() == "image,n_modal,EN,SD,PSNR,SSIM,MI,CC,SCD,Q_NCIE");
  // Same inputs give the same text.
  CHECK(report_table(golden_reports()) == report_table(reports));
}
