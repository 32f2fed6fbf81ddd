#pragma once

// Likelihood correction of the clean-image estimate: variable substitution,
// latent-scale expectations, half-quadratic splitting with FFT closed forms,
// and scale hyperparameter updates.

#include <complex>
#include <memory>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "flexfuse/grid.hpp"
#include "flexfuse/imageio.hpp"

namespace flexfuse {

/// Two-channel field: horizontal and vertical components.
struct GradientField {
  Field h;
  Field v;

  friend bool operator==(const GradientField&, const GradientField&) = default;
};

/// Periodic forward differences on a fixed (rows, cols) lattice together with
/// their cached frequency responses.
class GradientOperator {
 public:
  GradientOperator(std::size_t rows, std::size_t cols);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  /// (grad_h x)(r,c) = x(r,c+1) - x(r,c); (grad_v x)(r,c) = x(r+1,c) - x(r,c), indices mod extent.
  GradientField apply(const Field& x) const;
  Field adjoint(const GradientField& u) const;

  /// Unnormalized forward DFT, row-major spectrum.
  std::vector<std::complex<double>> fft(const Field& x) const;
  /// Inverse DFT including the 1/(rows*cols) factor. Writes the largest
  /// imaginary magnitude to *max_imag when given.
  Field ifft(const std::vector<std::complex<double>>& spectrum, double* max_imag = nullptr) const;

  const std::vector<std::complex<double>>& transfer_h() const noexcept { return fh_; }
  const std::vector<std::complex<double>>& transfer_v() const noexcept { return fv_; }

  /// Fault injection for self-tests: scales both cached responses by (1 + delta).
  void corrupt_transfer(double delta);

 private:
  struct Plans;
  std::size_t rows_, cols_;
  std::shared_ptr<const Plans> plans_;
  std::vector<std::complex<double>> fh_, fv_;
};

void require_matching(const GradientOperator& op, const Field& f, const char* what);

/// Fusion operands in [-1,1]. img3 absent means two-modal fusion.
struct SourceStack {
  NormalizedImage img1;
  NormalizedImage img2;
  std::optional<NormalizedImage> img3;

  std::size_t n_modal() const noexcept { return img3 ? 3 : 2; }
  std::size_t height() const noexcept { return img1.height(); }
  std::size_t width() const noexcept { return img1.width(); }
  void validate() const;
};

/// Double-precision view of a stack. img3 is a zero field in the two-modal case.
struct SourceFields {
  Field img1, img2, img3;
  std::size_t n_modal = 2;
};

SourceFields to_fields(const SourceStack& stack);

enum class ExpectationForm {
  sqrt_abs,  // m~ = sqrt(2)|y - x| / sqrt(gamma)   (default)
  squared,   // m~ = 2 (y - x)^2 / gamma
};

ExpectationForm parse_expectation_form(std::string_view name);
std::string_view to_string(ExpectationForm form);

struct EMConfig {
  double eta = 0.1;   // splitting penalty
  double psi = 0.5;   // total-variation weight
  double phi = 0.5;   // data/prior balance; carried for reference only, absorbed into gamma/rho
  double gamma0 = 1.0;
  double rho0 = 1.0;
  std::size_t inner_sweeps = 1;
  ExpectationForm form = ExpectationForm::sqrt_abs;

  void validate() const;
};

struct EMState {
  Field x, y, k;
  GradientField u;
  Field m_tilde, n_tilde;
  Field m, n;
  double gamma = 1.0;
  double rho = 1.0;
  double objective = 0.0;  // splitting objective after the last sweep

  static EMState fresh(const EMConfig& cfg) {
    EMState s;
    s.gamma = cfg.gamma0;
    s.rho = cfg.rho0;
    return s;
  }
};

/// x0 = f~ - img2 - img3, y = img1 - img2.
std::pair<Field, Field> build_substitution(const Field& f_tilde, const SourceFields& src);

struct Expectations {
  Field m_tilde, n_tilde;  // expectations as computed
  Field m, n;              // element-wise square roots, the weights used by x_update
};

Expectations e_step(const Field& x, const Field& y, double gamma, double rho, ExpectationForm form);

/// Exact minimizer of |u - grad k|^2 + |k - x|^2 over k.
Field k_update(const Field& x, const GradientField& u, const GradientOperator& op);

/// u = eta / (2 psi + eta) * grad k.
GradientField u_update(const Field& k, double eta, double psi, const GradientOperator& op);

/// x = (2 m^2 y + eta k) / (2 m^2 + 2 n^2 + eta), element-wise.
Field x_update(const Field& y, const Field& k, const Field& m, const Field& n, double eta);

inline constexpr double kExpectationFloor = 1e-6;
inline constexpr double kScaleMin = 1e-6;
inline constexpr double kScaleMax = 1e6;

/// gamma = mean(1 / max(m~, floor)), likewise rho from n~; both clamped.
std::pair<double, double> update_hyperparams(const Field& m_tilde, const Field& n_tilde);

double hqs_objective(const Field& x, const Field& y, const Field& k, const GradientField& u, const Field& m,
                     const Field& n, double eta, double psi, const GradientOperator& op);

/// One correction at a diffusion step. Updates state in place and returns
/// f^ = x + img2 + img3.
Field em_correct(const Field& f_tilde, const SourceFields& src, const EMConfig& cfg, EMState& state,
                 const GradientOperator& op);

}  // namespace flexfuse
