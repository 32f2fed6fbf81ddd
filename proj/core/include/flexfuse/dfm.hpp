#pragma once

// Diffusion Fusion Mamba: patch tokens -> unidirectional selective-SSM
// blocks with additive timestep conditioning -> AdaLN linear decoder.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flexfuse/grid.hpp"
#include "flexfuse/primitives.hpp"
#include "flexfuse/tensor.hpp"

namespace flexfuse {

struct DfmConfig {
  std::size_t patch = 4;     // p
  std::size_t dim = 64;      // token width d
  std::size_t channels = 1;  // c
  std::size_t depth = 4;     // number of blocks
  std::size_t inner = 128;   // E, SSM channel count
  std::size_t state = 16;    // N, SSM state size per channel
  std::size_t conv_width = 4;

  /// CPU-trainable default.
  static DfmConfig desk() { return {}; }
  /// 256x256x3 input with 16x16 patches (256 tokens).
  static DfmConfig full() { return {16, 384, 3, 12, 768, 16, 4}; }

  std::size_t token_width() const { return patch * patch * channels; }
  std::size_t decoder_width() const { return 2 * token_width(); }
  void validate() const;

  friend bool operator==(const DfmConfig&, const DfmConfig&) = default;
};

DfmConfig dfm_preset(const std::string& name);

template <std::floating_point T>
struct BlockParams {
  Tensor<T> norm_gamma, norm_beta;  // [d]
  Tensor<T> in_z_w, in_z_b;         // [E x d], [E]
  Tensor<T> in_gate_w, in_gate_b;   // [E x d], [E]
  Tensor<T> conv_w, conv_b;         // [E x K], [E]
  Tensor<T> b_proj_w;               // [N x E]
  Tensor<T> c_proj_w;               // [N x E]
  Tensor<T> dt_proj_w, dt_proj_b;   // [E x E], [E]  (pre-softplus step)
  Tensor<T> a_log;                  // [E x N], A = -exp(a_log)
  Tensor<T> out_w, out_b;           // [d x E], [d]
  Tensor<T> t_w1, t_b1, t_w2, t_b2; // timestep MLP, d -> d -> d
};

template <std::floating_point T>
struct DfmParams {
  DfmConfig config;
  Tensor<T> embed_w, embed_b;  // [d x p*p*c], [d]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> ada_w, ada_b;      // [2d x d], [2d]  shift | scale
  Tensor<T> final_w, final_b;  // [p*p*2c x d], [p*p*2c]

  /// All tensors zero (LayerNorm gains included).
  static DfmParams zeros(const DfmConfig& cfg);
  /// Default initialization; deterministic in the seed.
  static DfmParams init(const DfmConfig& cfg, std::uint64_t seed);

  /// Visits every learnable tensor with a stable name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;

  std::size_t parameter_count() const;

  template <std::floating_point U>
  DfmParams<U> cast() const;
};

/// Fixed 2-D sin/cos positional table, [grid_h * grid_w x dim].
template <std::floating_point T>
Tensor<T> positional_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim);

/// Sinusoidal embedding of the diffusion step, [dim].
template <std::floating_point T>
Tensor<T> timestep_embedding(double t, std::size_t dim);

/// Per-block activations retained for the backward pass.
template <std::floating_point T>
struct BlockTape {
  Tensor<T> x_in;
  nn::LayerNormCache<T> ln;
  Tensor<T> xn, z, g, zc, zs, bmat, cmat, dt_raw, delta, a;
  nn::Discretized<T> disc;
  Tensor<T> states, y, g_act, gated;
  Tensor<T> t_h, t_hs;
};

template <std::floating_point T>
struct DfmTape {
  std::size_t height = 0, width = 0;
  Tensor<T> patches;   // [M x p*p*c]
  Tensor<T> temb;      // [d]
  std::vector<BlockTape<T>> blocks;
  Tensor<T> h_final;   // last block output
  nn::LayerNormCache<T> ln_final;
  Tensor<T> h_norm, temb_act, modulation, h_mod;
};

template <std::floating_point T>
struct DenoiserOutput {
  Tensor<T> eps;  // [H x W x C]
  Tensor<T> cov;  // [H x W x C]
};

/// Patch tokens with positional embedding. image: [H x W x C].
template <std::floating_point T>
Tensor<T> patchify(const Tensor<T>& image, const DfmParams<T>& params);

/// Inverse rearrangement for per-token [p*p*C] rows.
template <std::floating_point T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t height, std::size_t width, const DfmConfig& cfg);

template <std::floating_point T>
Tensor<T> dfm_block_forward(const Tensor<T>& x, const Tensor<T>& temb, const BlockParams<T>& p,
                            BlockTape<T>* tape = nullptr);

/// AdaLN decoder. tokens: [M x d] -> two [H x W x C] fields.
template <std::floating_point T>
DenoiserOutput<T> decode(const Tensor<T>& tokens, const Tensor<T>& temb, const DfmParams<T>& params,
                         std::size_t height, std::size_t width, DfmTape<T>* tape = nullptr);

/// Full forward. image: [H x W x C]; H, W multiples of the patch size.
template <std::floating_point T>
DenoiserOutput<T> dfm_forward(const Tensor<T>& image, double t, const DfmParams<T>& params,
                              DfmTape<T>* tape = nullptr);

/// Reverse pass of dfm_forward; accumulates parameter gradients into grads.
/// Returns the gradient with respect to the input image.
template <std::floating_point T>
Tensor<T> dfm_backward(const DfmTape<T>& tape, const DfmParams<T>& params, const Tensor<T>& d_eps,
                       const Tensor<T>* d_cov, DfmParams<T>& grads);

/// Noise prediction for a single-channel field. Deterministic and reentrant.
template <std::floating_point T>
Grid<T> denoise(const Grid<T>& ft, std::size_t t, const DfmParams<T>& params);

template <std::floating_point T>
Tensor<T> grid_to_image(const Grid<T>& g);
template <std::floating_point T>
Grid<T> image_to_grid(const Tensor<T>& img);

}  // namespace flexfuse
