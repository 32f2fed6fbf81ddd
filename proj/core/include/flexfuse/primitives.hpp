#pragma once

// Differentiable building blocks of the denoiser. Every primitive has a
// forward function and an exact vector-Jacobian product. Token tensors are
// [tokens x features], row-major.

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "flexfuse/tensor.hpp"

namespace flexfuse::nn {

// ---- linear: y = x W^T + b ------------------------------------------------

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <std::floating_point T>
struct LinearGrads {
  Tensor<T> dx, dw, db;
};

template <std::floating_point T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias, const Tensor<T>& dy);

// ---- layer norm over the feature axis -------------------------------------

template <std::floating_point T>
struct LayerNormCache {
  std::vector<T> mean;
  std::vector<T> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

/// gamma/beta may be null for the affine-free variant used before AdaLN.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>* gamma, const Tensor<T>* beta,
                     LayerNormCache<T>* cache = nullptr);

template <std::floating_point T>
struct LayerNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <std::floating_point T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>* gamma,
                                      const LayerNormCache<T>& cache, const Tensor<T>& dy);

// ---- pointwise -------------------------------------------------------------

template <std::floating_point T>
Tensor<T> silu(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy);

template <std::floating_point T>
Tensor<T> softplus(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> softplus_backward(const Tensor<T>& x, const Tensor<T>& dy);

/// Element-wise product a * b.
template <std::floating_point T>
Tensor<T> gate(const Tensor<T>& a, const Tensor<T>& b);

// ---- causal depthwise conv over the token axis ----------------------------

/// y[t,e] = b[e] + sum_k w[e,k] x[t - K + 1 + k, e], zero before the first token.
template <std::floating_point T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <std::floating_point T>
struct ConvGrads {
  Tensor<T> dx, dw, db;
};

template <std::floating_point T>
ConvGrads<T> causal_conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy);

// ---- zero-order-hold discretization ---------------------------------------

inline constexpr double kZohSeriesThreshold = 1e-4;

struct ZohScalar {
  double a_bar;
  double b_bar;
};

/// Scalar ZOH of h' = a h + b x held for `delta`. Uses the series limit of
/// (e^{da} - 1)/(da) when |delta*a| < kZohSeriesThreshold.
ZohScalar zoh_discretize(double a, double b, double delta);

/// Exact branch only (no series fallback); exposed for continuity checks.
ZohScalar zoh_discretize_exact(double a, double b, double delta);
ZohScalar zoh_discretize_series(double a, double b, double delta);

/// Tensor form. A: [E x N], delta: [M x E], B: [M x N].
/// Abar, Bbar: [M x E x N] with Abar = exp(delta A), Bbar = phi(delta A) delta B.
template <std::floating_point T>
struct Discretized {
  Tensor<T> a_bar, b_bar;
};

template <std::floating_point T>
Discretized<T> zoh(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b);

template <std::floating_point T>
struct ZohGrads {
  Tensor<T> da, ddelta, db;
};

template <std::floating_point T>
ZohGrads<T> zoh_backward(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b,
                         const Tensor<T>& d_a_bar, const Tensor<T>& d_b_bar);

// ---- selective scan --------------------------------------------------------

/// h_t = Abar_t h_{t-1} + Bbar_t x_t (per channel e, state n), y_t = C_t . h_t, h_{-1} = 0.
/// x: [M x E], Abar/Bbar: [M x E x N], C: [M x N]. states (optional) receives h: [M x E x N].
template <std::floating_point T>
Tensor<T> ssm_scan(const Tensor<T>& x, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                   const Tensor<T>& c, Tensor<T>* states = nullptr);

template <std::floating_point T>
struct ScanGrads {
  Tensor<T> dx, da_bar, db_bar, dc;
};

template <std::floating_point T>
ScanGrads<T> ssm_scan_backward(const Tensor<T>& x, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                               const Tensor<T>& c, const Tensor<T>& states, const Tensor<T>& dy);

// ---- patch rearrangement ---------------------------------------------------

/// image: [H x W x C] -> [(H/p)(W/p) x p*p*C], row-major patch order, each
/// patch flattened as (row, col, channel).
template <std::floating_point T>
Tensor<T> patch_extract(const Tensor<T>& image, std::size_t patch);

/// Inverse of patch_extract.
template <std::floating_point T>
Tensor<T> patch_assemble(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                         std::size_t channels, std::size_t patch);

// ---- AdaLN modulation: y = x * (1 + scale) + shift --------------------------

template <std::floating_point T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);

template <std::floating_point T>
struct ModulateGrads {
  Tensor<T> dx, dshift, dscale;
};

template <std::floating_point T>
ModulateGrads<T> modulate_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& dy);

// ---- uniform dispatch ------------------------------------------------------

enum class Primitive {
  linear,       // inputs: x, W, b
  conv1d,       // inputs: x, w, b
  layer_norm,   // inputs: x, gamma, beta
  silu,         // inputs: x
  softplus,     // inputs: x
  gate,         // inputs: a, b
  zoh,          // inputs: A, delta, B              outputs: Abar, Bbar
  ssm_scan,     // inputs: x, Abar, Bbar, C
  patchify,     // inputs: image [H x W x C]        attrs: patch
  unpatchify,   // inputs: tokens                   attrs: patch, height, width, channels
  adaln,        // inputs: x, shift, scale
};

std::span<const Primitive> all_primitives();
std::string_view primitive_name(Primitive p);
/// Throws InvalidArgument for an unknown name.
Primitive primitive_from_name(std::string_view name);

struct PrimitiveAttrs {
  std::size_t patch = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
};

template <std::floating_point T>
std::vector<Tensor<T>> forward(Primitive p, std::span<const Tensor<T>> inputs,
                               const PrimitiveAttrs& attrs = {});

/// Vector-Jacobian product: one gradient per input, given one upstream
/// gradient per output.
template <std::floating_point T>
std::vector<Tensor<T>> backward(Primitive p, std::span<const Tensor<T>> inputs,
                                std::span<const Tensor<T>> upstream, const PrimitiveAttrs& attrs = {});

}  // namespace flexfuse::nn
