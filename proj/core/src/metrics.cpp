#include "flexfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "flexfuse/error.hpp"

namespace flexfuse {

namespace {

constexpr std::array<std::string_view, kMetricCount> kNames = {"EN", "SD", "PSNR", "SSIM", "MI", "CC", "SCD",
                                                               "Q_NCIE"};

void require_same(const Grid<double>& a, const Grid<double>& b) {
  if (!a.same_shape(b))
    throw InvalidArgument("metric operands differ in extent: " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
}

void require_nonempty(const Grid<double>& a) {
  if (a.empty()) throw InvalidArgument("metric operand is empty");
}

double entropy_of(std::span<const std::size_t> counts, double total, double log_base) {
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h / std::log(log_base);
}

Grid<double> to_gray(const ImageBuffer& img) {
  if (img.channels() != 1) throw InvalidArgument("metrics expect single-channel images");
  Grid<double> g(img.height(), img.width());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = img.pixels()[i];
  return g;
}

// Rank of each pixel under (value, index) ordering mapped to `bins` equal-frequency bins.
std::vector<std::size_t> rank_bins(const Grid<double>& a, std::size_t bins) {
  std::vector<std::size_t> order(a.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
  std::vector<std::size_t> out(a.size());
  for (std::size_t r = 0; r < order.size(); ++r) out[order[r]] = r * bins / a.size();
  return out;
}

}  // namespace

std::string_view metric_name(Metric m) { return kNames[static_cast<std::size_t>(m)]; }

Metric parse_metric(std::string_view name) {
  for (std::size_t i = 0; i < kMetricCount; ++i)
    if (kNames[i] == name) return kAllMetrics[i];
  throw InvalidArgument("unknown metric '" + std::string(name) + "'");
}

namespace metrics {

std::size_t bin_of(double v) noexcept {
  if (!(v > 0.0)) return 0;
  return std::min<std::size_t>(kBins - 1, static_cast<std::size_t>(std::floor(v * kBins)));
}

double entropy(const Grid<double>& a) {
  require_nonempty(a);
  std::array<std::size_t, kBins> hist{};
  for (double v : a.storage()) ++hist[bin_of(v)];
  return entropy_of(hist, static_cast<double>(a.size()), 2.0);
}

double standard_deviation(const Grid<double>& a) {
  require_nonempty(a);
  // Shifted by the first sample so a constant image gives exactly zero.
  const double n = static_cast<double>(a.size());
  const double ref = a[0];
  double mean = 0.0;
  for (double v : a.storage()) mean += v - ref;
  mean /= n;
  double ss = 0.0;
  for (double v : a.storage()) ss += (v - ref - mean) * (v - ref - mean);
  return std::sqrt(ss / n) * 255.0;
}

double psnr(const Grid<double>& a, const Grid<double>& b) {
  require_same(a, b);
  require_nonempty(a);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) * 255.0;
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

const std::array<double, 121>& ssim_window() {
  static const std::array<double, 121> w = [] {
    std::array<double, 11> g{};
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double x = i - 5;
      g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      s += g[i];
    }
    std::array<double, 121> out{};
    for (int r = 0; r < 11; ++r)
      for (int c = 0; c < 11; ++c) out[r * 11 + c] = g[r] * g[c] / (s * s);
    return out;
  }();
  return w;
}

double ssim(const Grid<double>& a, const Grid<double>& b) {
  require_same(a, b);
  constexpr std::size_t win = 11;
  if (a.rows() < win || a.cols() < win)
    throw InvalidArgument("SSIM needs images of at least 11x11, got " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()));
  constexpr double L = 255.0, C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);
  const auto& w = ssim_window();
  const std::size_t oh = a.rows() - win + 1, ow = a.cols() - win + 1;
  double total = 0.0;
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = w[i * win + j];
          const double x = a(r + i, c + j) * L, y = b(r + i, c + j) * L;
          mx += wt * x;
          my += wt * y;
          sxx += wt * x * x;
          syy += wt * y * y;
          sxy += wt * x * y;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
  }
  return total / static_cast<double>(oh * ow);
}

double mutual_information(const Grid<double>& a, const Grid<double>& b) {
  require_same(a, b);
  require_nonempty(a);
  std::vector<std::size_t> joint(kBins * kBins, 0);
  std::array<std::size_t, kBins> ha{}, hb{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t ia = bin_of(a[i]), ib = bin_of(b[i]);
    ++ha[ia];
    ++hb[ib];
    ++joint[ia * kBins + ib];
  }
  const double n = static_cast<double>(a.size());
  return entropy_of(ha, n, 2.0) + entropy_of(hb, n, 2.0) - entropy_of(joint, n, 2.0);
}

double correlation(const Grid<double>& a, const Grid<double>& b) {
  require_same(a, b);
  require_nonempty(a);
  // Shifted by the first samples, as in standard_deviation, so a flat operand is exactly flat.
  const double n = static_cast<double>(a.size());
  const double ra = a[0], rb = b[0];
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] - ra;
    mb += b[i] - rb;
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ra - ma, db = b[i] - rb - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double scd(const Grid<double>& fused, std::span<const Grid<double>> sources) {
  if (sources.size() < 2) throw InvalidArgument("SCD needs at least two sources");
  double total = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    require_same(fused, sources[i]);
    Grid<double> diff = fused;
    for (std::size_t j = 0; j < sources.size(); ++j) {
      if (j == i) continue;
      require_same(fused, sources[j]);
      for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= sources[j][k];
    }
    total += correlation(diff, sources[i]);
  }
  return total;
}

std::size_t ncc_bins(std::size_t pixels) noexcept {
  const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(pixels))));
  return std::clamp<std::size_t>(root, 2, kBins);
}

double nonlinear_correlation(const Grid<double>& a, const Grid<double>& b, std::size_t bins) {
  require_same(a, b);
  require_nonempty(a);
  const auto ra = rank_bins(a, bins), rb = rank_bins(b, bins);
  std::vector<std::size_t> joint(bins * bins, 0);
  for (std::size_t i = 0; i < ra.size(); ++i) ++joint[ra[i] * bins + rb[i]];
  return 2.0 - entropy_of(joint, static_cast<double>(a.size()), static_cast<double>(bins));
}

double qncie(const Grid<double>& fused, std::span<const Grid<double>> sources) {
  if (sources.empty()) throw InvalidArgument("Q_NCIE needs at least one source");
  std::vector<const Grid<double>*> vars{&fused};
  for (const auto& s : sources) {
    require_same(fused, s);
    vars.push_back(&s);
  }
  const std::size_t k = vars.size();
  const std::size_t bins = ncc_bins(fused.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = nonlinear_correlation(*vars[i], *vars[j], bins);
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      r(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  const Eigen::VectorXd lambda = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r, Eigen::EigenvaluesOnly).eigenvalues();
  const double kd = static_cast<double>(k), lb = std::log(static_cast<double>(bins));
  double q = 1.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const double p = lambda[i] / kd;
    if (p > 0.0) q += p * std::log(p) / lb;
  }
  return q;
}

}  // namespace metrics

double compute_metric(Metric m, const Grid<double>& fused, std::span<const Grid<double>> sources) {
  for (const auto& s : sources) require_same(fused, s);
  const auto mean_over = [&](double (*fn)(const Grid<double>&, const Grid<double>&)) {
    if (sources.empty()) throw InvalidArgument(std::string(metric_name(m)) + " needs at least one source");
    double s = 0.0;
    for (const auto& src : sources) s += fn(fused, src);
    return s / static_cast<double>(sources.size());
  };
  switch (m) {
    case Metric::en: return metrics::entropy(fused);
    case Metric::sd: return metrics::standard_deviation(fused);
    case Metric::psnr: return mean_over(&metrics::psnr);
    case Metric::ssim: return mean_over(&metrics::ssim);
    case Metric::mi: {
      double s = 0.0;
      for (const auto& src : sources) s += metrics::mutual_information(fused, src);
      return s;
    }
    case Metric::cc: return mean_over(&metrics::correlation);
    case Metric::scd: return metrics::scd(fused, sources);
    case Metric::qncie: return metrics::qncie(fused, sources);
  }
  throw InvalidArgument("unknown metric");
}

double compute_metric(Metric m, const ImageBuffer& fused, std::span<const ImageBuffer> sources) {
  std::vector<Grid<double>> src;
  for (const auto& s : sources) src.push_back(to_gray(s));
  return compute_metric(m, to_gray(fused), src);
}

MetricReport evaluate(const ImageBuffer& fused, std::span<const ImageBuffer> sources, std::string fused_id,
                      std::vector<std::string> source_ids) {
  if (sources.size() < 2 || sources.size() > 3) throw InvalidArgument("evaluate needs 2 or 3 sources");
  if (source_ids.empty())
    for (std::size_t i = 0; i < sources.size(); ++i) source_ids.push_back("src" + std::to_string(i + 1));
  if (source_ids.size() != sources.size()) throw InvalidArgument("one id per source required");

  const Grid<double> f = to_gray(fused);
  std::vector<Grid<double>> src;
  for (const auto& s : sources) src.push_back(to_gray(s));

  MetricReport r;
  r.fused_id = std::move(fused_id);
  r.source_ids = std::move(source_ids);
  r.n_modal = sources.size();
  for (const auto& s : src) {
    r.psnr.push_back(metrics::psnr(f, s));
    r.ssim.push_back(metrics::ssim(f, s));
    r.mi.push_back(metrics::mutual_information(f, s));
    r.cc.push_back(metrics::correlation(f, s));
  }
  for (Metric m : kAllMetrics) r.values[static_cast<std::size_t>(m)] = compute_metric(m, f, src);
  return r;
}

std::string report_csv_header() {
  std::string h = "image,n_modal";
  for (Metric m : kAllMetrics) h += "," + std::string(metric_name(m));
  return h;
}

std::string report_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os << r.fused_id << ',' << r.n_modal << std::setprecision(10);
  for (double v : r.values) os << ',' << v;
  return os.str();
}

std::string report_json(const std::vector<MetricReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["image"] = r.fused_id;
    j["sources"] = r.source_ids;
    j["n_modal"] = r.n_modal;
    nlohmann::ordered_json vals;
    for (Metric m : kAllMetrics) vals[std::string(metric_name(m))] = r.value(m);
    j["metrics"] = vals;
    j["per_source"] = {{"PSNR", r.psnr}, {"SSIM", r.ssim}, {"MI", r.mi}, {"CC", r.cc}};
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::string report_table(const std::vector<MetricReport>& reports) {
  std::size_t name_w = 5;
  for (const auto& r : reports) name_w = std::max(name_w, r.fused_id.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "image";
  for (Metric m : kAllMetrics) os << "  " << std::right << std::setw(9) << metric_name(m);
  os << '\n' << std::string(name_w + kMetricCount * 11, '-') << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.fused_id;
    for (double v : r.values) os << "  " << std::right << std::setw(9) << std::fixed << std::setprecision(4) << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace flexfuse
