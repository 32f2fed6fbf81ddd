#include "flexfuse/oracles/dense.hpp"

#include <Eigen/Dense>

namespace flexfuse::oracle {

Field random_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Field f(h, w);
  for (auto& v : f.storage()) v = d(rng);
  return f;
}

GradientField random_gradient_field(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo, double hi) {
  GradientField u;
  u.h = random_field(h, w, rng, lo, hi);
  u.v = random_field(h, w, rng, lo, hi);
  return u;
}

namespace {

// Row (r,c) of the forward difference: +1 at the neighbour, -1 on the diagonal.
Eigen::MatrixXd difference_matrix(std::size_t h, std::size_t w, bool horizontal) {
  const auto n = static_cast<Eigen::Index>(h * w);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const auto i = static_cast<Eigen::Index>(r * w + c);
      const std::size_t rr = horizontal ? r : (r + 1) % h;
      const std::size_t cc = horizontal ? (c + 1) % w : c;
      d(i, static_cast<Eigen::Index>(rr * w + cc)) += 1.0;
      d(i, i) -= 1.0;
    }
  return d;
}

Eigen::VectorXd flat(const Field& f) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) v[static_cast<Eigen::Index>(i)] = f[i];
  return v;
}

}  // namespace

Field dense_k_solve(const Field& x, const GradientField& u) {
  const std::size_t h = x.rows(), w = x.cols();
  const Eigen::MatrixXd dh = difference_matrix(h, w, true);
  const Eigen::MatrixXd dv = difference_matrix(h, w, false);
  const auto n = static_cast<Eigen::Index>(h * w);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) + dh.transpose() * dh + dv.transpose() * dv;
  const Eigen::VectorXd rhs = flat(x) + dh.transpose() * flat(u.h) + dv.transpose() * flat(u.v);
  const Eigen::VectorXd k = a.partialPivLu().solve(rhs);
  Field out(h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k[static_cast<Eigen::Index>(i)];
  return out;
}

double quadratic_vertex(const std::function<double(double)>& f, double center) {
  const double fm = f(center - 1.0), f0 = f(center), fp = f(center + 1.0);
  const double a = 0.5 * (fp + fm) - f0;
  const double b = 0.5 * (fp - fm);
  return center - b / (2.0 * a);
}

GradientField reference_u(const Field& k, double eta, double psi) {
  const std::size_t h = k.rows(), w = k.cols();
  GradientField u{Field(h, w), Field(h, w)};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double gh = k(r, (c + 1) % w) - k(r, c);
      const double gv = k((r + 1) % h, c) - k(r, c);
      u.h(r, c) = quadratic_vertex([&](double t) { return 0.5 * eta * (t - gh) * (t - gh) + psi * t * t; });
      u.v(r, c) = quadratic_vertex([&](double t) { return 0.5 * eta * (t - gv) * (t - gv) + psi * t * t; });
    }
  return u;
}

Field reference_x(const Field& y, const Field& k, const Field& m, const Field& n, double eta) {
  Field x(y.rows(), y.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m2 = m[i] * m[i], n2 = n[i] * n[i];
    x[i] = quadratic_vertex(
        [&](double t) { return m2 * (t - y[i]) * (t - y[i]) + n2 * t * t + 0.5 * eta * (k[i] - t) * (k[i] - t); },
        k[i]);
  }
  return x;
}

double naive_hqs_objective(const Field& x, const Field& y, const Field& k, const GradientField& u, const Field& m,
                           const Field& n, double eta, double psi) {
  const std::size_t h = x.rows(), w = x.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double fit = m(r, c) * (x(r, c) - y(r, c));
      const double sparse = n(r, c) * x(r, c);
      const double gh = k(r, (c + 1) % w) - k(r, c);
      const double gv = k((r + 1) % h, c) - k(r, c);
      total += fit * fit;
      total += sparse * sparse;
      total += psi * (u.h(r, c) * u.h(r, c) + u.v(r, c) * u.v(r, c));
      total += 0.5 * eta * ((u.h(r, c) - gh) * (u.h(r, c) - gh) + (u.v(r, c) - gv) * (u.v(r, c) - gv));
      total += 0.5 * eta * (k(r, c) - x(r, c)) * (k(r, c) - x(r, c));
    }
  }
  return total;
}

}  // namespace flexfuse::oracle
