#include "flexfuse/em.hpp"

#include <algorithm>
#include <cmath>

#include "flexfuse/error.hpp"

namespace flexfuse {

namespace {

void require_same(const Field& a, const Field& b, const char* what) {
  if (!a.same_shape(b))
    throw InvalidArgument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}

double sum_sq(const Field& f) {
  double s = 0.0;
  for (double v : f.storage()) s += v * v;
  return s;
}

constexpr double kImagTolerance = 1e-6;

}  // namespace

void SourceStack::validate() const {
  const auto check = [&](const NormalizedImage& im, const char* name) {
    if (im.height() != img1.height() || im.width() != img1.width())
      throw InvalidArgument(std::string("source ") + name + " is " + std::to_string(im.height()) + "x" +
                            std::to_string(im.width()) + ", expected " + std::to_string(img1.height()) + "x" +
                            std::to_string(img1.width()));
  };
  if (img1.height() == 0 || img1.width() == 0) throw InvalidArgument("empty source image");
  check(img2, "img2");
  if (img3) check(*img3, "img3");
}

SourceFields to_fields(const SourceStack& stack) {
  stack.validate();
  SourceFields f;
  f.img1 = stack.img1.grid().cast<double>();
  f.img2 = stack.img2.grid().cast<double>();
  f.img3 = stack.img3 ? stack.img3->grid().cast<double>() : Field(stack.height(), stack.width());
  f.n_modal = stack.n_modal();
  return f;
}

ExpectationForm parse_expectation_form(std::string_view name) {
  if (name == "sqrt_abs") return ExpectationForm::sqrt_abs;
  if (name == "squared") return ExpectationForm::squared;
  throw InvalidArgument("unknown expectation form '" + std::string(name) + "' (expected sqrt_abs or squared)");
}

std::string_view to_string(ExpectationForm form) {
  return form == ExpectationForm::sqrt_abs ? "sqrt_abs" : "squared";
}

void EMConfig::validate() const {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  if (!(psi > 0.0)) throw InvalidArgument("psi must be positive");
  if (!(gamma0 > 0.0) || !(rho0 > 0.0)) throw InvalidArgument("gamma0 and rho0 must be positive");
  if (inner_sweeps == 0) throw InvalidArgument("inner_sweeps must be at least 1");
}

std::pair<Field, Field> build_substitution(const Field& f_tilde, const SourceFields& src) {
  require_same(f_tilde, src.img1, "build_substitution");
  require_same(f_tilde, src.img2, "build_substitution");
  require_same(f_tilde, src.img3, "build_substitution");
  Field x0(f_tilde.rows(), f_tilde.cols()), y(f_tilde.rows(), f_tilde.cols());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    x0[i] = f_tilde[i] - src.img2[i] - src.img3[i];
    y[i] = src.img1[i] - src.img2[i];
  }
  return {std::move(x0), std::move(y)};
}

Expectations e_step(const Field& x, const Field& y, double gamma, double rho, ExpectationForm form) {
  if (!(gamma > 0.0) || !(rho > 0.0)) throw InvalidArgument("e_step: gamma and rho must be positive");
  require_same(x, y, "e_step");
  const std::size_t h = x.rows(), w = x.cols();
  Expectations e{Field(h, w), Field(h, w), Field(h, w), Field(h, w)};
  const double sg = std::sqrt(2.0 / gamma);
  const double sr = std::sqrt(2.0 / rho);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - x[i];
    e.m_tilde[i] = form == ExpectationForm::sqrt_abs ? sg * std::abs(r) : 2.0 * r * r / gamma;
    e.n_tilde[i] = sr * std::abs(x[i]);
    e.m[i] = std::sqrt(e.m_tilde[i]);
    e.n[i] = std::sqrt(e.n_tilde[i]);
  }
  return e;
}

Field k_update(const Field& x, const GradientField& u, const GradientOperator& op) {
  require_matching(op, x, "k_update");
  require_matching(op, u.h, "k_update");
  require_matching(op, u.v, "k_update");
  auto num = op.fft(x);
  const auto uh = op.fft(u.h);
  const auto uv = op.fft(u.v);
  const auto& fh = op.transfer_h();
  const auto& fv = op.transfer_v();
  for (std::size_t i = 0; i < num.size(); ++i) {
    num[i] += std::conj(fh[i]) * uh[i] + std::conj(fv[i]) * uv[i];
    num[i] /= 1.0 + std::norm(fh[i]) + std::norm(fv[i]);
  }
  double imag = 0.0;
  Field k = op.ifft(num, &imag);
  double scale = 1.0;
  for (double v : k.storage()) scale = std::max(scale, std::abs(v));
  if (imag > kImagTolerance * scale)
    throw NumericalError("k_update: imaginary residue " + std::to_string(imag) +
                         " exceeds tolerance; transfer cache is inconsistent");
  return k;
}

GradientField u_update(const Field& k, double eta, double psi, const GradientOperator& op) {
  GradientField u = op.apply(k);
  const double c = eta / (2.0 * psi + eta);
  for (auto& v : u.h.storage()) v *= c;
  for (auto& v : u.v.storage()) v *= c;
  return u;
}

Field x_update(const Field& y, const Field& k, const Field& m, const Field& n, double eta) {
  require_same(y, k, "x_update");
  require_same(y, m, "x_update");
  require_same(y, n, "x_update");
  Field x(y.rows(), y.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m2 = m[i] * m[i], n2 = n[i] * n[i];
    x[i] = (2.0 * m2 * y[i] + eta * k[i]) / (2.0 * m2 + 2.0 * n2 + eta);
  }
  return x;
}

std::pair<double, double> update_hyperparams(const Field& m_tilde, const Field& n_tilde) {
  const auto mean_reciprocal = [](const Field& f) {
    if (f.empty()) throw InvalidArgument("update_hyperparams: empty field");
    double s = 0.0;
    for (double v : f.storage()) s += 1.0 / std::max(v, kExpectationFloor);
    return std::clamp(s / static_cast<double>(f.size()), kScaleMin, kScaleMax);
  };
  return {mean_reciprocal(m_tilde), mean_reciprocal(n_tilde)};
}

double hqs_objective(const Field& x, const Field& y, const Field& k, const GradientField& u, const Field& m,
                     const Field& n, double eta, double psi, const GradientOperator& op) {
  require_same(x, y, "hqs_objective");
  require_same(x, k, "hqs_objective");
  require_same(x, m, "hqs_objective");
  require_same(x, n, "hqs_objective");
  const GradientField gk = op.apply(k);
  double data = 0.0, prior = 0.0, split = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = m[i] * (x[i] - y[i]);
    const double b = n[i] * x[i];
    data += a * a;
    prior += b * b;
    const double dh = u.h[i] - gk.h[i], dv = u.v[i] - gk.v[i], dk = k[i] - x[i];
    split += dh * dh + dv * dv + dk * dk;
  }
  return data + prior + psi * (sum_sq(u.h) + sum_sq(u.v)) + 0.5 * eta * split;
}

Field em_correct(const Field& f_tilde, const SourceFields& src, const EMConfig& cfg, EMState& state,
                 const GradientOperator& op) {
  cfg.validate();
  require_matching(op, f_tilde, "em_correct");
  auto [x0, y] = build_substitution(f_tilde, src);

  Expectations e = e_step(x0, y, state.gamma, state.rho, cfg.form);
  state.k = x0;
  state.u = op.apply(x0);
  state.x = std::move(x0);
  state.y = std::move(y);

  for (std::size_t s = 0; s < cfg.inner_sweeps; ++s) {
    state.k = k_update(state.x, state.u, op);
    state.u = u_update(state.k, cfg.eta, cfg.psi, op);
    state.x = x_update(state.y, state.k, e.m, e.n, cfg.eta);
  }
  state.objective = hqs_objective(state.x, state.y, state.k, state.u, e.m, e.n, cfg.eta, cfg.psi, op);

  std::tie(state.gamma, state.rho) = update_hyperparams(e.m_tilde, e.n_tilde);
  state.m_tilde = std::move(e.m_tilde);
  state.n_tilde = std::move(e.n_tilde);
  state.m = std::move(e.m);
  state.n = std::move(e.n);

  Field f_hat(f_tilde.rows(), f_tilde.cols());
  for (std::size_t i = 0; i < f_hat.size(); ++i) f_hat[i] = state.x[i] + src.img2[i] + src.img3[i];
  return f_hat;
}

}  // namespace flexfuse
