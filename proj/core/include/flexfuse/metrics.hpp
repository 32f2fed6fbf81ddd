#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexfuse/grid.hpp"
#include "flexfuse/imageio.hpp"

namespace flexfuse {

enum class Metric { en, sd, psnr, ssim, mi, cc, scd, qncie };

inline constexpr std::size_t kMetricCount = 8;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics = {
    Metric::en, Metric::sd, Metric::psnr, Metric::ssim, Metric::mi, Metric::cc, Metric::scd, Metric::qncie};

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

namespace metrics {

inline constexpr std::size_t kBins = 256;
inline constexpr double kPsnrCap = 99.0;

/// Histogram bin of a [0,1] value: min(255, floor(256 v)).
std::size_t bin_of(double v) noexcept;

// All functions take single-channel grids with values in [0,1].
double entropy(const Grid<double>& a);
double standard_deviation(const Grid<double>& a);               // population, x255
double psnr(const Grid<double>& a, const Grid<double>& b);        // dB, capped
double ssim(const Grid<double>& a, const Grid<double>& b);        // 11x11 gaussian, valid window
double mutual_information(const Grid<double>& a, const Grid<double>& b);  // bits
double correlation(const Grid<double>& a, const Grid<double>& b);        // Pearson; 0 if either is flat
double scd(const Grid<double>& fused, std::span<const Grid<double>> sources);
double qncie(const Grid<double>& fused, std::span<const Grid<double>> sources);

/// Equal-frequency bin count used by the nonlinear correlation coefficient.
std::size_t ncc_bins(std::size_t pixels) noexcept;
double nonlinear_correlation(const Grid<double>& a, const Grid<double>& b, std::size_t bins);

/// Normalized 11x11 window, sigma 1.5, row-major.
const std::array<double, 121>& ssim_window();

}  // namespace metrics

/// Scalar for one metric. Pairwise metrics are averaged over sources except
/// MI, which is summed.
double compute_metric(Metric m, const ImageBuffer& fused, std::span<const ImageBuffer> sources);
double compute_metric(Metric m, const Grid<double>& fused, std::span<const Grid<double>> sources);

struct MetricReport {
  std::string fused_id;
  std::vector<std::string> source_ids;
  std::size_t n_modal = 0;
  std::array<double, kMetricCount> values{};
  // Per-source values for the pairwise metrics, indexed like source_ids.
  std::vector<double> psnr, ssim, mi, cc;

  double value(Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

MetricReport evaluate(const ImageBuffer& fused, std::span<const ImageBuffer> sources, std::string fused_id = {},
                      std::vector<std::string> source_ids = {});

std::string report_csv_header();
std::string report_csv_row(const MetricReport& r);
std::string report_json(const std::vector<MetricReport>& reports);
/// Fixed-width grid, one row per fused image, one column per metric.
std::string report_table(const std::vector<MetricReport>& reports);

}  // namespace flexfuse
