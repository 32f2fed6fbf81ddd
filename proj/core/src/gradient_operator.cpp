#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "flexfuse/em.hpp"
#include "flexfuse/error.hpp"

namespace flexfuse {

namespace {
// FFTW's planner is not reentrant; execution with the new-array interface is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct GradientOperator::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  Plans(std::size_t rows, std::size_t cols) {
    std::vector<std::complex<double>> in(rows * cols), out(rows * cols);
    auto* i = reinterpret_cast<fftw_complex*>(in.data());
    auto* o = reinterpret_cast<fftw_complex*>(out.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), i, o, FFTW_FORWARD, flags);
    backward = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), i, o, FFTW_BACKWARD, flags);
    if (!forward || !backward) throw Error("FFT plan creation failed");
  }
  ~Plans() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(backward);
  }
  Plans(const Plans&) = delete;
  Plans& operator=(const Plans&) = delete;
};

GradientOperator::GradientOperator(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows < 2 || cols < 2) throw InvalidArgument("gradient operator needs at least a 2x2 lattice");
  plans_ = std::make_shared<const Plans>(rows, cols);
  fh_.resize(rows * cols);
  fv_.resize(rows * cols);
  const double tau = 2.0 * std::numbers::pi;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::complex<double> ev = std::polar(1.0, tau * static_cast<double>(r) / static_cast<double>(rows));
    for (std::size_t c = 0; c < cols; ++c) {
      const std::complex<double> eh =
          std::polar(1.0, tau * static_cast<double>(c) / static_cast<double>(cols));
      fh_[r * cols + c] = eh - 1.0;
      fv_[r * cols + c] = ev - 1.0;
    }
  }
}

void require_matching(const GradientOperator& op, const Field& f, const char* what) {
  if (f.rows() != op.rows() || f.cols() != op.cols())
    throw InvalidArgument(std::string(what) + ": field is " + std::to_string(f.rows()) + "x" +
                          std::to_string(f.cols()) + ", operator is " + std::to_string(op.rows()) + "x" +
                          std::to_string(op.cols()));
}

GradientField GradientOperator::apply(const Field& x) const {
  require_matching(*this, x, "gradient");
  GradientField g{Field(rows_, cols_), Field(rows_, cols_)};
  for (std::size_t r = 0; r < rows_; ++r) {
    const std::size_t rn = (r + 1) % rows_;
    for (std::size_t c = 0; c < cols_; ++c) {
      const std::size_t cn = (c + 1) % cols_;
      g.h(r, c) = x(r, cn) - x(r, c);
      g.v(r, c) = x(rn, c) - x(r, c);
    }
  }
  return g;
}

Field GradientOperator::adjoint(const GradientField& u) const {
  require_matching(*this, u.h, "gradient adjoint");
  require_matching(*this, u.v, "gradient adjoint");
  Field out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const std::size_t rp = (r + rows_ - 1) % rows_;
    for (std::size_t c = 0; c < cols_; ++c) {
      const std::size_t cp = (c + cols_ - 1) % cols_;
      out(r, c) = (u.h(r, cp) - u.h(r, c)) + (u.v(rp, c) - u.v(r, c));
    }
  }
  return out;
}

std::vector<std::complex<double>> GradientOperator::fft(const Field& x) const {
  require_matching(*this, x, "fft");
  std::vector<std::complex<double>> in(x.storage().begin(), x.storage().end()), out(x.size());
  fftw_execute_dft(plans_->forward, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

Field GradientOperator::ifft(const std::vector<std::complex<double>>& spectrum, double* max_imag) const {
  if (spectrum.size() != rows_ * cols_) throw InvalidArgument("ifft: spectrum size mismatch");
  std::vector<std::complex<double>> in = spectrum, out(spectrum.size());
  fftw_execute_dft(plans_->backward, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / static_cast<double>(out.size());
  Field f(rows_, cols_);
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    f[i] = out[i].real() * scale;
    worst = std::max(worst, std::abs(out[i].imag() * scale));
  }
  if (max_imag) *max_imag = worst;
  return f;
}

void GradientOperator::corrupt_transfer(double delta) {
  for (auto& v : fh_) v *= 1.0 + delta;
  for (auto& v : fv_) v *= 1.0 + delta;
}

}  // namespace flexfuse
