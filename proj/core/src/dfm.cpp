#include "flexfuse/dfm.hpp"

#include <cmath>
#include <random>

namespace flexfuse {

using nn::Discretized;

void DfmConfig::validate() const {
  if (patch == 0 || dim == 0 || depth == 0 || inner == 0 || state == 0 || conv_width == 0)
    throw InvalidArgument("DFM config fields must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("DFM channels must be 1 or 3");
  if (dim % 4 != 0) throw InvalidArgument("DFM token width must be a multiple of 4 (2-D sin/cos table)");
}

DfmConfig dfm_preset(const std::string& name) {
  if (name == "desk") return DfmConfig::desk();
  if (name == "full") return DfmConfig::full();
  throw InvalidArgument("unknown DFM preset '" + name + "' (expected desk or full)");
}

// ---- parameters ------------------------------------------------------------

namespace {

template <std::floating_point T, typename Self, typename Fn>
void visit_params(Self& self, Fn&& fn) {
  fn("embed.weight", self.embed_w);
  fn("embed.bias", self.embed_b);
  for (std::size_t i = 0; i < self.blocks.size(); ++i) {
    auto& b = self.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    fn(p + "norm.gamma", b.norm_gamma);
    fn(p + "norm.beta", b.norm_beta);
    fn(p + "in_z.weight", b.in_z_w);
    fn(p + "in_z.bias", b.in_z_b);
    fn(p + "in_gate.weight", b.in_gate_w);
    fn(p + "in_gate.bias", b.in_gate_b);
    fn(p + "conv.weight", b.conv_w);
    fn(p + "conv.bias", b.conv_b);
    fn(p + "b_proj.weight", b.b_proj_w);
    fn(p + "c_proj.weight", b.c_proj_w);
    fn(p + "dt_proj.weight", b.dt_proj_w);
    fn(p + "dt_proj.bias", b.dt_proj_b);
    fn(p + "a_log", b.a_log);
    fn(p + "out.weight", b.out_w);
    fn(p + "out.bias", b.out_b);
    fn(p + "t_mlp.0.weight", b.t_w1);
    fn(p + "t_mlp.0.bias", b.t_b1);
    fn(p + "t_mlp.2.weight", b.t_w2);
    fn(p + "t_mlp.2.bias", b.t_b2);
  }
  fn("decoder.ada.weight", self.ada_w);
  fn("decoder.ada.bias", self.ada_b);
  fn("decoder.final.weight", self.final_w);
  fn("decoder.final.bias", self.final_b);
}

template <std::floating_point T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
}

template <std::floating_point T>
double fan_in_bound(const Tensor<T>& w) {
  return 1.0 / std::sqrt(static_cast<double>(w.cols()));
}

template <std::floating_point T>
void add_row_vector(Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t m = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) += v[j];
}

template <std::floating_point T>
Tensor<T> column_sums(const Tensor<T>& x) {
  Tensor<T> out({1, x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
  return out;
}

template <std::floating_point T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <std::floating_point T>
DfmParams<T> DfmParams<T>::zeros(const DfmConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim, e = cfg.inner, n = cfg.state, k = cfg.conv_width;
  DfmParams p;
  p.config = cfg;
  p.embed_w = Tensor<T>({d, cfg.token_width()});
  p.embed_b = Tensor<T>({d});
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.norm_gamma = Tensor<T>({d});
    b.norm_beta = Tensor<T>({d});
    b.in_z_w = Tensor<T>({e, d});
    b.in_z_b = Tensor<T>({e});
    b.in_gate_w = Tensor<T>({e, d});
    b.in_gate_b = Tensor<T>({e});
    b.conv_w = Tensor<T>({e, k});
    b.conv_b = Tensor<T>({e});
    b.b_proj_w = Tensor<T>({n, e});
    b.c_proj_w = Tensor<T>({n, e});
    b.dt_proj_w = Tensor<T>({e, e});
    b.dt_proj_b = Tensor<T>({e});
    b.a_log = Tensor<T>({e, n});
    b.out_w = Tensor<T>({d, e});
    b.out_b = Tensor<T>({d});
    b.t_w1 = Tensor<T>({d, d});
    b.t_b1 = Tensor<T>({d});
    b.t_w2 = Tensor<T>({d, d});
    b.t_b2 = Tensor<T>({d});
  }
  p.ada_w = Tensor<T>({2 * d, d});
  p.ada_b = Tensor<T>({2 * d});
  p.final_w = Tensor<T>({cfg.decoder_width(), d});
  p.final_b = Tensor<T>({cfg.decoder_width()});
  return p;
}

template <std::floating_point T>
DfmParams<T> DfmParams<T>::init(const DfmConfig& cfg, std::uint64_t seed) {
  DfmParams p = zeros(cfg);
  std::mt19937_64 rng(seed);
  fill_uniform(p.embed_w, fan_in_bound(p.embed_w), rng);
  for (auto& b : p.blocks) {
    b.norm_gamma.fill(T(1));
    fill_uniform(b.in_z_w, fan_in_bound(b.in_z_w), rng);
    fill_uniform(b.in_gate_w, fan_in_bound(b.in_gate_w), rng);
    fill_uniform(b.conv_w, fan_in_bound(b.conv_w), rng);
    fill_uniform(b.b_proj_w, fan_in_bound(b.b_proj_w), rng);
    fill_uniform(b.c_proj_w, fan_in_bound(b.c_proj_w), rng);
    fill_uniform(b.dt_proj_w, 0.1 * fan_in_bound(b.dt_proj_w), rng);
    // Step sizes start log-uniform in [1e-3, 1e-1]; store the softplus preimage.
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    for (auto& v : b.dt_proj_b.storage()) {
      const double dt = std::exp(log_dt(rng));
      v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    for (std::size_t c = 0; c < cfg.inner; ++c)
      for (std::size_t s = 0; s < cfg.state; ++s) b.a_log(c, s) = static_cast<T>(std::log(double(s + 1)));
    fill_uniform(b.out_w, fan_in_bound(b.out_w), rng);
    fill_uniform(b.t_w1, fan_in_bound(b.t_w1), rng);
    fill_uniform(b.t_w2, fan_in_bound(b.t_w2), rng);
  }
  // ada and final layers start at zero: the untrained model predicts eps = 0.
  return p;
}

template <std::floating_point T>
void DfmParams<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_params<T>(*this, fn);
}

template <std::floating_point T>
void DfmParams<T>::for_each(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  visit_params<T>(*this, fn);
}

template <std::floating_point T>
std::size_t DfmParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <std::floating_point T>
template <std::floating_point U>
DfmParams<U> DfmParams<T>::cast() const {
  DfmParams<U> out = DfmParams<U>::zeros(config);
  std::vector<const Tensor<T>*> src;
  for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

// ---- embeddings --------------------------------------------------------------

template <std::floating_point T>
Tensor<T> positional_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  if (dim % 4 != 0) throw InvalidArgument("positional table width must be a multiple of 4");
  const std::size_t quarter = dim / 4;
  Tensor<T> table({grid_h * grid_w, dim});
  for (std::size_t gy = 0; gy < grid_h; ++gy)
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      const std::size_t m = gy * grid_w + gx;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        table(m, i) = static_cast<T>(std::sin(gy * omega));
        table(m, quarter + i) = static_cast<T>(std::cos(gy * omega));
        table(m, 2 * quarter + i) = static_cast<T>(std::sin(gx * omega));
        table(m, 3 * quarter + i) = static_cast<T>(std::cos(gx * omega));
      }
    }
  return table;
}

template <std::floating_point T>
Tensor<T> timestep_embedding(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> emb({1, dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    emb[i] = static_cast<T>(std::cos(t * freq));
    emb[half + i] = static_cast<T>(std::sin(t * freq));
  }
  return emb;
}

// ---- forward -----------------------------------------------------------------

template <std::floating_point T>
Tensor<T> patchify(const Tensor<T>& image, const DfmParams<T>& params) {
  const auto& cfg = params.config;
  if (image.rank() != 3 || image.dim(2) != cfg.channels)
    throw InvalidArgument("patchify: expected [H x W x " + std::to_string(cfg.channels) + "] image, got " +
                          shape_string(image.shape()));
  auto tokens = nn::linear(nn::patch_extract(image, cfg.patch), params.embed_w, &params.embed_b);
  tokens += positional_table<T>(image.dim(0) / cfg.patch, image.dim(1) / cfg.patch, cfg.dim);
  return tokens;
}

template <std::floating_point T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t height, std::size_t width, const DfmConfig& cfg) {
  return nn::patch_assemble(tokens, height, width, cfg.channels, cfg.patch);
}

template <std::floating_point T>
Tensor<T> dfm_block_forward(const Tensor<T>& x, const Tensor<T>& temb, const BlockParams<T>& p,
                            BlockTape<T>* tape) {
  BlockTape<T> local;
  BlockTape<T>& tp = tape ? *tape : local;

  tp.x_in = x;
  tp.xn = nn::layer_norm(x, &p.norm_gamma, &p.norm_beta, &tp.ln);
  tp.z = nn::linear(tp.xn, p.in_z_w, &p.in_z_b);
  tp.g = nn::linear(tp.xn, p.in_gate_w, &p.in_gate_b);
  tp.zc = nn::causal_conv1d(tp.z, p.conv_w, p.conv_b);
  tp.zs = nn::silu(tp.zc);
  tp.bmat = nn::linear<T>(tp.zs, p.b_proj_w, nullptr);
  tp.cmat = nn::linear<T>(tp.zs, p.c_proj_w, nullptr);
  tp.dt_raw = nn::linear(tp.zs, p.dt_proj_w, &p.dt_proj_b);
  tp.delta = nn::softplus(tp.dt_raw);
  tp.a = p.a_log.zeros_like();
  for (std::size_t i = 0; i < tp.a.size(); ++i) tp.a[i] = -std::exp(p.a_log[i]);
  tp.disc = nn::zoh(tp.a, tp.delta, tp.bmat);
  tp.y = nn::ssm_scan(tp.zs, tp.disc.a_bar, tp.disc.b_bar, tp.cmat, &tp.states);
  tp.g_act = nn::silu(tp.g);
  tp.gated = nn::gate(tp.y, tp.g_act);

  Tensor<T> out = nn::linear(tp.gated, p.out_w, &p.out_b);
  out += x;

  tp.t_h = nn::linear(temb, p.t_w1, &p.t_b1);
  tp.t_hs = nn::silu(tp.t_h);
  const Tensor<T> t_out = nn::linear(tp.t_hs, p.t_w2, &p.t_b2);
  add_row_vector(out, t_out);
  return out;
}

namespace {

// Decoder rows are laid out (py, px, channel) over 2C channels: the first C
// are the noise prediction, the remaining C the covariance.
template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> split_halves(const Tensor<T>& rows, std::size_t channels) {
  const std::size_t m = rows.rows(), pixels = rows.cols() / (2 * channels);
  Tensor<T> a({m, pixels * channels}), b({m, pixels * channels});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t px = 0; px < pixels; ++px)
      for (std::size_t c = 0; c < channels; ++c) {
        a(i, px * channels + c) = rows(i, px * 2 * channels + c);
        b(i, px * channels + c) = rows(i, px * 2 * channels + channels + c);
      }
  return {std::move(a), std::move(b)};
}

template <std::floating_point T>
Tensor<T> merge_halves(const Tensor<T>& a, const Tensor<T>* b, std::size_t channels) {
  const std::size_t m = a.rows(), pixels = a.cols() / channels;
  Tensor<T> rows({m, pixels * 2 * channels});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t px = 0; px < pixels; ++px)
      for (std::size_t c = 0; c < channels; ++c) {
        rows(i, px * 2 * channels + c) = a(i, px * channels + c);
        if (b) rows(i, px * 2 * channels + channels + c) = (*b)(i, px * channels + c);
      }
  return rows;
}

}  // namespace

template <std::floating_point T>
DenoiserOutput<T> decode(const Tensor<T>& tokens, const Tensor<T>& temb, const DfmParams<T>& params,
                         std::size_t height, std::size_t width, DfmTape<T>* tape) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.dim;
  nn::LayerNormCache<T> ln;
  Tensor<T> h_norm = nn::layer_norm<T>(tokens, nullptr, nullptr, &ln);
  Tensor<T> temb_act = nn::silu(temb);
  Tensor<T> modulation = nn::linear(temb_act, params.ada_w, &params.ada_b);
  Tensor<T> shift({d}), scale({d});
  for (std::size_t j = 0; j < d; ++j) {
    shift[j] = modulation[j];
    scale[j] = modulation[d + j];
  }
  Tensor<T> h_mod = nn::modulate(h_norm, shift, scale);
  Tensor<T> rows = nn::linear(h_mod, params.final_w, &params.final_b);
  auto [eps_rows, cov_rows] = split_halves(rows, cfg.channels);
  DenoiserOutput<T> out{unpatchify(eps_rows, height, width, cfg), unpatchify(cov_rows, height, width, cfg)};
  if (tape) {
    tape->h_final = tokens;
    tape->ln_final = std::move(ln);
    tape->h_norm = std::move(h_norm);
    tape->temb_act = std::move(temb_act);
    tape->modulation = std::move(modulation);
    tape->h_mod = std::move(h_mod);
  }
  return out;
}

template <std::floating_point T>
DenoiserOutput<T> dfm_forward(const Tensor<T>& image, double t, const DfmParams<T>& params, DfmTape<T>* tape) {
  const auto& cfg = params.config;
  if (image.rank() != 3 || image.dim(2) != cfg.channels)
    throw InvalidArgument("denoiser input must be [H x W x " + std::to_string(cfg.channels) + "], got " +
                          shape_string(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (h % cfg.patch || w % cfg.patch)
    throw InvalidArgument("denoiser input " + shape_string(image.shape()) + " not a multiple of patch size " +
                          std::to_string(cfg.patch));

  Tensor<T> temb = timestep_embedding<T>(t, cfg.dim);
  Tensor<T> patches = nn::patch_extract(image, cfg.patch);
  Tensor<T> x = nn::linear(patches, params.embed_w, &params.embed_b);
  x += positional_table<T>(h / cfg.patch, w / cfg.patch, cfg.dim);

  if (tape) {
    tape->height = h;
    tape->width = w;
    tape->patches = std::move(patches);
    tape->temb = temb;
    tape->blocks.resize(params.blocks.size());
  }
  for (std::size_t i = 0; i < params.blocks.size(); ++i)
    x = dfm_block_forward(x, temb, params.blocks[i], tape ? &tape->blocks[i] : nullptr);
  return decode(x, temb, params, h, w, tape);
}

// ---- backward ----------------------------------------------------------------

namespace {

template <std::floating_point T>
Tensor<T> block_backward(const BlockTape<T>& tp, const BlockParams<T>& p, const Tensor<T>& temb,
                         const Tensor<T>& d_out, BlockParams<T>& g) {
  // Timestep MLP; the embedding itself is constant.
  auto t2 = nn::linear_backward(tp.t_hs, p.t_w2, true, column_sums(d_out));
  accumulate(g.t_w2, t2.dw);
  accumulate(g.t_b2, t2.db);
  auto t1 = nn::linear_backward(temb, p.t_w1, true, nn::silu_backward(tp.t_h, t2.dx));
  accumulate(g.t_w1, t1.dw);
  accumulate(g.t_b1, t1.db);

  auto out = nn::linear_backward(tp.gated, p.out_w, true, d_out);
  accumulate(g.out_w, out.dw);
  accumulate(g.out_b, out.db);

  const Tensor<T> d_y = nn::gate(out.dx, tp.g_act);
  const Tensor<T> d_gact = nn::gate(out.dx, tp.y);
  const Tensor<T> d_g = nn::silu_backward(tp.g, d_gact);

  auto scan = nn::ssm_scan_backward(tp.zs, tp.disc.a_bar, tp.disc.b_bar, tp.cmat, tp.states, d_y);
  auto z = nn::zoh_backward(tp.a, tp.delta, tp.bmat, scan.da_bar, scan.db_bar);
  for (std::size_t i = 0; i < g.a_log.size(); ++i) g.a_log[i] += z.da[i] * tp.a[i];

  Tensor<T> d_zs = std::move(scan.dx);
  const Tensor<T> d_dt_raw = nn::softplus_backward(tp.dt_raw, z.ddelta);
  auto dt = nn::linear_backward(tp.zs, p.dt_proj_w, true, d_dt_raw);
  accumulate(g.dt_proj_w, dt.dw);
  accumulate(g.dt_proj_b, dt.db);
  d_zs += dt.dx;
  auto bp = nn::linear_backward(tp.zs, p.b_proj_w, false, z.db);
  accumulate(g.b_proj_w, bp.dw);
  d_zs += bp.dx;
  auto cp = nn::linear_backward(tp.zs, p.c_proj_w, false, scan.dc);
  accumulate(g.c_proj_w, cp.dw);
  d_zs += cp.dx;

  const Tensor<T> d_zc = nn::silu_backward(tp.zc, d_zs);
  auto conv = nn::causal_conv1d_backward(tp.z, p.conv_w, d_zc);
  accumulate(g.conv_w, conv.dw);
  accumulate(g.conv_b, conv.db);

  auto iz = nn::linear_backward(tp.xn, p.in_z_w, true, conv.dx);
  auto ig = nn::linear_backward(tp.xn, p.in_gate_w, true, d_g);
  accumulate(g.in_z_w, iz.dw);
  accumulate(g.in_z_b, iz.db);
  accumulate(g.in_gate_w, ig.dw);
  accumulate(g.in_gate_b, ig.db);
  iz.dx += ig.dx;

  auto ln = nn::layer_norm_backward(tp.x_in, &p.norm_gamma, tp.ln, iz.dx);
  accumulate(g.norm_gamma, ln.dgamma);
  accumulate(g.norm_beta, ln.dbeta);

  Tensor<T> d_x = d_out;
  d_x += ln.dx;
  return d_x;
}

}  // namespace

template <std::floating_point T>
Tensor<T> dfm_backward(const DfmTape<T>& tape, const DfmParams<T>& params, const Tensor<T>& d_eps,
                       const Tensor<T>* d_cov, DfmParams<T>& grads) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.dim;

  // Decoder.
  const Tensor<T> d_eps_rows = nn::patch_extract(d_eps, cfg.patch);
  Tensor<T> d_cov_rows;
  if (d_cov) d_cov_rows = nn::patch_extract(*d_cov, cfg.patch);
  const Tensor<T> d_rows = merge_halves(d_eps_rows, d_cov ? &d_cov_rows : nullptr, cfg.channels);

  auto fin = nn::linear_backward(tape.h_mod, params.final_w, true, d_rows);
  accumulate(grads.final_w, fin.dw);
  accumulate(grads.final_b, fin.db);

  Tensor<T> scale({d});
  for (std::size_t j = 0; j < d; ++j) scale[j] = tape.modulation[d + j];
  auto mod = nn::modulate_backward(tape.h_norm, scale, fin.dx);
  Tensor<T> d_modulation({1, 2 * d});
  for (std::size_t j = 0; j < d; ++j) {
    d_modulation[j] = mod.dshift[j];
    d_modulation[d + j] = mod.dscale[j];
  }
  auto ada = nn::linear_backward(tape.temb_act, params.ada_w, true, d_modulation);
  accumulate(grads.ada_w, ada.dw);
  accumulate(grads.ada_b, ada.db);

  Tensor<T> d_x = nn::layer_norm_backward<T>(tape.h_final, nullptr, tape.ln_final, mod.dx).dx;

  // Blocks, last to first.
  for (std::size_t i = params.blocks.size(); i-- > 0;) {
    d_x = block_backward(tape.blocks[i], params.blocks[i], tape.temb, d_x, grads.blocks[i]);
  }

  // Patch embedding.
  auto emb = nn::linear_backward(tape.patches, params.embed_w, true, d_x);
  accumulate(grads.embed_w, emb.dw);
  accumulate(grads.embed_b, emb.db);
  return nn::patch_assemble(emb.dx, tape.height, tape.width, cfg.channels, cfg.patch);
}

// ---- single-channel convenience -----------------------------------------------

template <std::floating_point T>
Tensor<T> grid_to_image(const Grid<T>& g) {
  return Tensor<T>({g.rows(), g.cols(), 1}, g.storage());
}

template <std::floating_point T>
Grid<T> image_to_grid(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(2) != 1) throw InvalidArgument("image_to_grid: expected [H x W x 1]");
  return Grid<T>(img.dim(0), img.dim(1), img.storage());
}

template <std::floating_point T>
Grid<T> denoise(const Grid<T>& ft, std::size_t t, const DfmParams<T>& params) {
  if (params.config.channels != 1)
    throw InvalidArgument("denoise: checkpoint expects " + std::to_string(params.config.channels) +
                          " channels; fusion operates on single-channel luma");
  return image_to_grid(dfm_forward(grid_to_image(ft), static_cast<double>(t), params).eps);
}

#define FLEXFUSE_INSTANTIATE(T)                                                                          \
  template struct DfmParams<T>;                                                                          \
  template Tensor<T> positional_table<T>(std::size_t, std::size_t, std::size_t);                         \
  template Tensor<T> timestep_embedding<T>(double, std::size_t);                                         \
  template Tensor<T> patchify(const Tensor<T>&, const DfmParams<T>&);                                    \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, const DfmConfig&);           \
  template Tensor<T> dfm_block_forward(const Tensor<T>&, const Tensor<T>&, const BlockParams<T>&,        \
                                       BlockTape<T>*);                                                   \
  template DenoiserOutput<T> decode(const Tensor<T>&, const Tensor<T>&, const DfmParams<T>&, std::size_t, \
                                    std::size_t, DfmTape<T>*);                                           \
  template DenoiserOutput<T> dfm_forward(const Tensor<T>&, double, const DfmParams<T>&, DfmTape<T>*);    \
  template Tensor<T> dfm_backward(const DfmTape<T>&, const DfmParams<T>&, const Tensor<T>&,              \
                                  const Tensor<T>*, DfmParams<T>&);                                      \
  template Grid<T> denoise(const Grid<T>&, std::size_t, const DfmParams<T>&);                            \
  template Tensor<T> grid_to_image(const Grid<T>&);                                                      \
  template Grid<T> image_to_grid(const Tensor<T>&);

FLEXFUSE_INSTANTIATE(float)
FLEXFUSE_INSTANTIATE(double)
FLEXFUSE_INSTANTIATE(long double)  // extended-precision reference for gradient checks

template DfmParams<double> DfmParams<float>::cast<double>() const;
template DfmParams<float> DfmParams<double>::cast<float>() const;
template DfmParams<float> DfmParams<float>::cast<float>() const;
template DfmParams<double> DfmParams<double>::cast<double>() const;
template DfmParams<long double> DfmParams<float>::cast<long double>() const;
template DfmParams<long double> DfmParams<double>::cast<long double>() const;

#undef FLEXFUSE_INSTANTIATE

}  // namespace flexfuse
