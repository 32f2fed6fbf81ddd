#include "flexfuse/oracles/naive_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace flexfuse::oracle {

namespace {

int bin256(double v) {
  int b = static_cast<int>(std::floor(v * 256.0));
  if (b < 0) b = 0;
  if (b > 255) b = 255;
  return b;
}

double pearson(const Grid<double>& a, const Grid<double>& b) {
  const std::size_t n = a.size();
  double sa = 0, sb = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      sa += a(r, c);
      sb += b(r, c);
    }
  const double ma = sa / n, mb = sb / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      num += (a(r, c) - ma) * (b(r, c) - mb);
      da += (a(r, c) - ma) * (a(r, c) - ma);
      db += (b(r, c) - mb) * (b(r, c) - mb);
    }
  if (da == 0 || db == 0) return 0.0;
  return num / (std::sqrt(da) * std::sqrt(db));
}

double ssim_pair(const Grid<double>& x, const Grid<double>& y) {
  const double L = 255.0, c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double g[11][11];
  double total = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
      total += g[i][j];
    }
  double acc = 0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + 11 <= x.rows(); ++r)
    for (std::size_t c = 0; c + 11 <= x.cols(); ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += g[i][j] / total * x(r + i, c + j) * L;
          my += g[i][j] / total * y(r + i, c + j) * L;
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = x(r + i, c + j) * L - mx, dy = y(r + i, c + j) * L - my;
          vx += g[i][j] / total * dx * dx;
          vy += g[i][j] / total * dy * dy;
          cxy += g[i][j] / total * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return acc / windows;
}

double mi_pair(const Grid<double>& a, const Grid<double>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{bin256(a[i]), bin256(b[i])}] += 1.0 / n;
    pa[bin256(a[i])] += 1.0 / n;
    pb[bin256(b[i])] += 1.0 / n;
  }
  double mi = 0;
  for (const auto& [key, p] : joint) mi += p * std::log2(p / (pa[key.first] * pb[key.second]));
  return mi;
}

std::vector<int> rank_bins(const Grid<double>& a, int bins) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < a.size(); ++i) v.emplace_back(a[i], i);
  std::sort(v.begin(), v.end());
  std::vector<int> out(a.size());
  for (std::size_t r = 0; r < v.size(); ++r) out[v[r].second] = static_cast<int>(r * bins / v.size());
  return out;
}

double ncc(const Grid<double>& a, const Grid<double>& b, int bins) {
  const auto ra = rank_bins(a, bins), rb = rank_bins(b, bins);
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < ra.size(); ++i) joint[{ra[i], rb[i]}] += 1.0;
  double h = 0;
  for (const auto& [key, count] : joint) {
    const double p = count / ra.size();
    h += p * std::log(p) / std::log(static_cast<double>(bins));
  }
  return 2.0 + h;
}

}  // namespace

double naive_entropy(const Grid<double>& a) {
  std::map<int, double> hist;
  for (std::size_t i = 0; i < a.size(); ++i) hist[bin256(a[i])] += 1.0;
  double h = 0;
  for (const auto& [bin, count] : hist) {
    const double p = count / a.size();
    h -= p * std::log2(p);
  }
  return h;
}

double naive_sd(const Grid<double>& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * 255.0;
  const double mean = s / a.size();
  double v = 0;
  for (std::size_t i = 0; i < a.size(); ++i) v += (a[i] * 255.0 - mean) * (a[i] * 255.0 - mean);
  return std::sqrt(v / a.size());
}

double naive_psnr(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  double total = 0;
  for (const auto& s : sources) {
    double mse = 0;
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < f.cols(); ++c) mse += std::pow(255.0 * f(r, c) - 255.0 * s(r, c), 2);
    mse /= f.size();
    total += mse == 0 ? 99.0 : std::min(99.0, 20.0 * std::log10(255.0) - 10.0 * std::log10(mse));
  }
  return total / sources.size();
}

double naive_ssim(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  double total = 0;
  for (const auto& s : sources) total += ssim_pair(f, s);
  return total / sources.size();
}

double naive_mi(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  double total = 0;
  for (const auto& s : sources) total += mi_pair(f, s);
  return total;
}

double naive_cc(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  double total = 0;
  for (const auto& s : sources) total += pearson(f, s);
  return total / sources.size();
}

double naive_scd(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  double total = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Grid<double> d(f.rows(), f.cols());
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < f.cols(); ++c) {
        double others = 0;
        for (std::size_t j = 0; j < sources.size(); ++j)
          if (j != i) others += sources[j](r, c);
        d(r, c) = f(r, c) - others;
      }
    total += pearson(d, sources[i]);
  }
  return total;
}

double naive_qncie(const Grid<double>& f, const std::vector<Grid<double>>& sources) {
  std::vector<const Grid<double>*> vars{&f};
  for (const auto& s : sources) vars.push_back(&s);
  const int bins = static_cast<int>(std::clamp<double>(std::floor(std::sqrt(double(f.size()))), 2, 256));
  const std::size_t k = vars.size();
  std::vector<std::vector<double>> r(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) r[i][j] = ncc(*vars[i], *vars[j], bins);
  double q = 1.0;
  for (double lambda : jacobi_eigenvalues(r)) {
    const double p = lambda / k;
    if (p > 0) q += p * std::log(p) / std::log(static_cast<double>(bins));
  }
  return q;
}

std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  return ev;
}

}  // namespace flexfuse::oracle
