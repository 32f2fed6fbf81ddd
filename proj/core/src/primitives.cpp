#include "flexfuse/primitives.hpp"

#include <array>
#include <cmath>

namespace flexfuse::nn {

namespace {

template <std::floating_point T>
void require_rank2(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw InvalidArgument(std::string(what) + ": expected a rank-2 tensor");
}

template <std::floating_point T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Internal accumulation type: double, or wider when T is.
template <std::floating_point T>
using Wide = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <std::floating_point W>
W phi(W a) {
  if (std::abs(a) < W(kZohSeriesThreshold)) return W(1) + a / W(2) + a * a / W(6);
  return std::expm1(a) / a;
}

template <std::floating_point W>
W phi_derivative(W a) {
  if (std::abs(a) < W(1e-3)) return W(0.5) + a / W(3) + a * a / W(8) + a * a * a / W(30);
  return (a * std::exp(a) - std::expm1(a)) / (a * a);
}

}  // namespace

// ---- linear ----------------------------------------------------------------

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  require_rank2(x, "linear input");
  require_rank2(w, "linear weight");
  const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  if (w.cols() != k)
    throw InvalidArgument("linear: weight " + shape_string(w.shape()) + " incompatible with input " +
                          shape_string(x.shape()));
  if (bias && bias->size() != n) throw InvalidArgument("linear: bias size mismatch");

  // Transpose once so the inner loop is a contiguous axpy.
  std::vector<T> wt(k * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) wt[c * n + r] = w(r, c);

  Tensor<T> y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* yr = y.data() + i * n;
    if (bias)
      for (std::size_t j = 0; j < n; ++j) yr[j] = (*bias)[j];
    const T* xr = x.data() + i * k;
    for (std::size_t c = 0; c < k; ++c) {
      const T xv = xr[c];
      const T* wr = wt.data() + c * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

template <std::floating_point T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias, const Tensor<T>& dy) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  require_shape(dy, {m, n}, "linear_backward upstream");
  LinearGrads<T> g{Tensor<T>({m, k}), Tensor<T>({n, k}), has_bias ? Tensor<T>({n}) : Tensor<T>()};
  for (std::size_t i = 0; i < m; ++i) {
    T* dxr = g.dx.data() + i * k;
    const T* xr = x.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T d = dy(i, j);
      if (d == T(0)) continue;
      const T* wr = w.data() + j * k;
      T* dwr = g.dw.data() + j * k;
      for (std::size_t c = 0; c < k; ++c) {
        dxr[c] += d * wr[c];
        dwr[c] += d * xr[c];
      }
    }
  }
  if (has_bias)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g.db[j] += dy(i, j);
  return g;
}

// ---- layer norm --------------------------------------------------------------

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>* gamma, const Tensor<T>* beta,
                     LayerNormCache<T>* cache) {
  require_rank2(x, "layer_norm input");
  const std::size_t m = x.rows(), d = x.cols();
  if ((gamma && gamma->size() != d) || (beta && beta->size() != d))
    throw InvalidArgument("layer_norm: affine parameter size mismatch");
  Tensor<T> y({m, d});
  if (cache) {
    cache->mean.assign(m, T(0));
    cache->rstd.assign(m, T(0));
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = x.data() + i * d;
    using W = Wide<T>;
    W mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<W>(d);
    W var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<W>(d);
    const T rstd = static_cast<T>(W(1) / std::sqrt(var + W(kLayerNormEps)));
    const T mu = static_cast<T>(mean);
    for (std::size_t j = 0; j < d; ++j) {
      T v = (xr[j] - mu) * rstd;
      if (gamma) v *= (*gamma)[j];
      if (beta) v += (*beta)[j];
      y(i, j) = v;
    }
    if (cache) {
      cache->mean[i] = mu;
      cache->rstd[i] = rstd;
    }
  }
  return y;
}

template <std::floating_point T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>* gamma,
                                      const LayerNormCache<T>& cache, const Tensor<T>& dy) {
  const std::size_t m = x.rows(), d = x.cols();
  require_shape(dy, {m, d}, "layer_norm_backward upstream");
  LayerNormGrads<T> g{Tensor<T>({m, d}), gamma ? Tensor<T>({d}) : Tensor<T>(),
                      gamma ? Tensor<T>({d}) : Tensor<T>()};
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t i = 0; i < m; ++i) {
    const T mu = cache.mean[i], rstd = cache.rstd[i];
    T mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (x(i, j) - mu) * rstd;
      dxhat[j] = gamma ? dy(i, j) * (*gamma)[j] : dy(i, j);
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
      if (gamma) {
        g.dgamma[j] += dy(i, j) * xhat[j];
        g.dbeta[j] += dy(i, j);
      }
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j)
      g.dx(i, j) = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
  return g;
}

// ---- pointwise ---------------------------------------------------------------

template <std::floating_point T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y = x.zeros_like();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

template <std::floating_point T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  require_shape(dy, x.shape(), "silu_backward upstream");
  Tensor<T> dx = x.zeros_like();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
  return dx;
}

template <std::floating_point T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> y = x.zeros_like();
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] > T(20) ? x[i] : std::log1p(std::exp(x[i]));
  return y;
}

template <std::floating_point T>
Tensor<T> softplus_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  require_shape(dy, x.shape(), "softplus_backward upstream");
  Tensor<T> dx = x.zeros_like();
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * sigmoid(x[i]);
  return dx;
}

template <std::floating_point T>
Tensor<T> gate(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "gate");
  Tensor<T> y = a.zeros_like();
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

// ---- causal conv1d -----------------------------------------------------------

template <std::floating_point T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank2(x, "conv1d input");
  const std::size_t m = x.rows(), e = x.cols();
  require_rank2(w, "conv1d weight");
  if (w.rows() != e || b.size() != e) throw InvalidArgument("conv1d: channel count mismatch");
  const std::size_t width = w.cols();
  Tensor<T> y({m, e});
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t c = 0; c < e; ++c) {
      T acc = b[c];
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(width - 1);
        if (s >= 0) acc += w(c, k) * x(static_cast<std::size_t>(s), c);
      }
      y(t, c) = acc;
    }
  }
  return y;
}

template <std::floating_point T>
ConvGrads<T> causal_conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy) {
  const std::size_t m = x.rows(), e = x.cols(), width = w.cols();
  require_shape(dy, {m, e}, "conv1d_backward upstream");
  ConvGrads<T> g{Tensor<T>({m, e}), Tensor<T>({e, width}), Tensor<T>({e})};
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t c = 0; c < e; ++c) {
      const T d = dy(t, c);
      g.db[c] += d;
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(width - 1);
        if (s < 0) continue;
        g.dx(static_cast<std::size_t>(s), c) += d * w(c, k);
        g.dw(c, k) += d * x(static_cast<std::size_t>(s), c);
      }
    }
  }
  return g;
}

// ---- zoh ---------------------------------------------------------------------

ZohScalar zoh_discretize_exact(double a, double b, double delta) {
  const double da = delta * a;
  return {std::exp(da), std::expm1(da) / da * delta * b};
}

ZohScalar zoh_discretize_series(double a, double b, double delta) {
  const double da = delta * a;
  return {std::exp(da), delta * b * (1.0 + da / 2.0 + da * da / 6.0)};
}

ZohScalar zoh_discretize(double a, double b, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("zoh_discretize: step must be positive");
  const double da = delta * a;
  return std::abs(da) < kZohSeriesThreshold ? zoh_discretize_series(a, b, delta)
                                            : zoh_discretize_exact(a, b, delta);
}

template <std::floating_point T>
Discretized<T> zoh(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b) {
  require_rank2(a, "zoh A");
  require_rank2(delta, "zoh delta");
  require_rank2(b, "zoh B");
  const std::size_t e = a.rows(), n = a.cols(), m = delta.rows();
  if (delta.cols() != e || b.rows() != m || b.cols() != n)
    throw InvalidArgument("zoh: inconsistent shapes A" + shape_string(a.shape()) + " delta" +
                          shape_string(delta.shape()) + " B" + shape_string(b.shape()));
  Discretized<T> out{Tensor<T>({m, e, n}), Tensor<T>({m, e, n})};
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t c = 0; c < e; ++c) {
      using W = Wide<T>;
      const W dt = delta(t, c);
      const std::size_t base = (t * e + c) * n;
      for (std::size_t s = 0; s < n; ++s) {
        const W da = dt * a(c, s);
        out.a_bar[base + s] = static_cast<T>(std::exp(da));
        out.b_bar[base + s] = static_cast<T>(phi(da) * dt * b(t, s));
      }
    }
  }
  return out;
}

template <std::floating_point T>
ZohGrads<T> zoh_backward(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b,
                         const Tensor<T>& d_a_bar, const Tensor<T>& d_b_bar) {
  const std::size_t e = a.rows(), n = a.cols(), m = delta.rows();
  require_shape(d_a_bar, {m, e, n}, "zoh_backward dAbar");
  require_shape(d_b_bar, {m, e, n}, "zoh_backward dBbar");
  using W = Wide<T>;
  ZohGrads<T> g{a.zeros_like(), delta.zeros_like(), b.zeros_like()};
  std::vector<W> acc_a(e * n, W(0)), acc_b(m * n, W(0));
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t c = 0; c < e; ++c) {
      const W dt = delta(t, c);
      const std::size_t base = (t * e + c) * n;
      W ddelta = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const W av = a(c, s), bv = b(t, s);
        const W da = dt * av;
        const W ea = std::exp(da);
        const W p = phi(da), dp = phi_derivative(da);
        const W ga = d_a_bar[base + s], gb = d_b_bar[base + s];
        // Abar = e^{dt a};  Bbar = phi(dt a) dt b
        ddelta += ga * av * ea + gb * (dp * av * dt * bv + p * bv);
        acc_a[c * n + s] += ga * dt * ea + gb * dp * dt * dt * bv;
        acc_b[t * n + s] += gb * p * dt;
      }
      g.ddelta(t, c) = static_cast<T>(ddelta);
    }
  }
  std::transform(acc_a.begin(), acc_a.end(), g.da.storage().begin(), [](W v) { return static_cast<T>(v); });
  std::transform(acc_b.begin(), acc_b.end(), g.db.storage().begin(), [](W v) { return static_cast<T>(v); });
  return g;
}

// ---- scan --------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> ssm_scan(const Tensor<T>& x, const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                   Tensor<T>* states) {
  require_rank2(x, "ssm_scan input");
  require_rank2(c, "ssm_scan C");
  const std::size_t m = x.rows(), e = x.cols(), n = c.cols();
  if (c.rows() != m) throw InvalidArgument("ssm_scan: C has wrong token count");
  require_shape(a_bar, {m, e, n}, "ssm_scan Abar");
  require_shape(b_bar, {m, e, n}, "ssm_scan Bbar");

  Tensor<T> y({m, e});
  std::vector<T> h(e * n, T(0));
  if (states) *states = Tensor<T>({m, e, n});
  for (std::size_t t = 0; t < m; ++t) {
    const T* ct = c.data() + t * n;
    for (std::size_t ch = 0; ch < e; ++ch) {
      const std::size_t base = (t * e + ch) * n;
      const T xv = x(t, ch);
      T* hc = h.data() + ch * n;
      T acc = 0;
      for (std::size_t s = 0; s < n; ++s) {
        hc[s] = a_bar[base + s] * hc[s] + b_bar[base + s] * xv;
        acc += ct[s] * hc[s];
      }
      y(t, ch) = acc;
    }
    if (states) std::copy(h.begin(), h.end(), states->data() + t * e * n);
  }
  return y;
}

template <std::floating_point T>
ScanGrads<T> ssm_scan_backward(const Tensor<T>& x, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                               const Tensor<T>& c, const Tensor<T>& states, const Tensor<T>& dy) {
  const std::size_t m = x.rows(), e = x.cols(), n = c.cols();
  require_shape(dy, {m, e}, "ssm_scan_backward upstream");
  require_shape(states, {m, e, n}, "ssm_scan_backward states");
  ScanGrads<T> g{x.zeros_like(), a_bar.zeros_like(), b_bar.zeros_like(), c.zeros_like()};
  std::vector<T> carry(e * n, T(0));
  for (std::size_t tt = m; tt-- > 0;) {
    const T* ct = c.data() + tt * n;
    T* dct = g.dc.data() + tt * n;
    for (std::size_t ch = 0; ch < e; ++ch) {
      const std::size_t base = (tt * e + ch) * n;
      const T dyv = dy(tt, ch), xv = x(tt, ch);
      T* dh = carry.data() + ch * n;
      const T* h = states.data() + base;
      const T* h_prev = tt > 0 ? states.data() + base - e * n : nullptr;
      T dx = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const T gs = dh[s] + ct[s] * dyv;
        dct[s] += dyv * h[s];
        g.da_bar[base + s] = h_prev ? gs * h_prev[s] : T(0);
        g.db_bar[base + s] = gs * xv;
        dx += gs * b_bar[base + s];
        dh[s] = gs * a_bar[base + s];
      }
      g.dx(tt, ch) = dx;
    }
  }
  return g;
}

// ---- patches -----------------------------------------------------------------

template <std::floating_point T>
Tensor<T> patch_extract(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw InvalidArgument("patch_extract: expected [H x W x C] image");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  if (patch == 0 || h % patch || w % patch)
    throw InvalidArgument("patch_extract: image " + shape_string(image.shape()) +
                          " not divisible by patch " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch, tok = patch * patch * ch;
  Tensor<T> out({gh * gw, tok});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* dst = out.data() + (gy * gw + gx) * tok;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < ch; ++c)
            dst[(py * patch + px) * ch + c] = image[((gy * patch + py) * w + gx * patch + px) * ch + c];
    }
  return out;
}

template <std::floating_point T>
Tensor<T> patch_assemble(const Tensor<T>& tokens, std::size_t height, std::size_t width,
                         std::size_t channels, std::size_t patch) {
  if (patch == 0 || height % patch || width % patch)
    throw InvalidArgument("patch_assemble: extent not divisible by patch");
  const std::size_t gh = height / patch, gw = width / patch, tok = patch * patch * channels;
  require_shape(tokens, {gh * gw, tok}, "patch_assemble tokens");
  Tensor<T> img({height, width, channels});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const T* src = tokens.data() + (gy * gw + gx) * tok;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < channels; ++c)
            img[((gy * patch + py) * width + gx * patch + px) * channels + c] = src[(py * patch + px) * channels + c];
    }
  return img;
}

// ---- modulate ----------------------------------------------------------------

template <std::floating_point T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale) {
  require_rank2(x, "modulate input");
  const std::size_t m = x.rows(), d = x.cols();
  if (shift.size() != d || scale.size() != d) throw InvalidArgument("modulate: size mismatch");
  Tensor<T> y({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) y(i, j) = x(i, j) * (T(1) + scale[j]) + shift[j];
  return y;
}

template <std::floating_point T>
ModulateGrads<T> modulate_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& dy) {
  const std::size_t m = x.rows(), d = x.cols();
  require_shape(dy, {m, d}, "modulate_backward upstream");
  ModulateGrads<T> g{Tensor<T>({m, d}), Tensor<T>({d}), Tensor<T>({d})};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      g.dx(i, j) = dy(i, j) * (T(1) + scale[j]);
      g.dshift[j] += dy(i, j);
      g.dscale[j] += dy(i, j) * x(i, j);
    }
  return g;
}

// ---- dispatch ----------------------------------------------------------------

namespace {

struct PrimitiveEntry {
  Primitive id;
  std::string_view name;
  std::size_t inputs;
};

constexpr std::array<PrimitiveEntry, 11> kPrimitives{{
    {Primitive::linear, "linear", 3},
    {Primitive::conv1d, "conv1d", 3},
    {Primitive::layer_norm, "layer_norm", 3},
    {Primitive::silu, "silu", 1},
    {Primitive::softplus, "softplus", 1},
    {Primitive::gate, "gate", 2},
    {Primitive::zoh, "zoh", 3},
    {Primitive::ssm_scan, "ssm_scan", 4},
    {Primitive::patchify, "patchify", 1},
    {Primitive::unpatchify, "unpatchify", 1},
    {Primitive::adaln, "adaln", 3},
}};

constexpr std::array<Primitive, 11> kPrimitiveIds = [] {
  std::array<Primitive, 11> ids{};
  for (std::size_t i = 0; i < kPrimitives.size(); ++i) ids[i] = kPrimitives[i].id;
  return ids;
}();

const PrimitiveEntry& entry(Primitive p) {
  for (const auto& e : kPrimitives)
    if (e.id == p) return e;
  throw InvalidArgument("unknown primitive");
}

template <std::floating_point T>
void require_inputs(Primitive p, std::span<const Tensor<T>> inputs) {
  const auto& e = entry(p);
  if (inputs.size() != e.inputs)
    throw InvalidArgument(std::string(e.name) + ": expected " + std::to_string(e.inputs) + " inputs, got " +
                          std::to_string(inputs.size()));
}

}  // namespace

std::span<const Primitive> all_primitives() { return kPrimitiveIds; }

std::string_view primitive_name(Primitive p) { return entry(p).name; }

Primitive primitive_from_name(std::string_view name) {
  for (const auto& e : kPrimitives)
    if (e.name == name) return e.id;
  throw InvalidArgument("unknown primitive '" + std::string(name) + "'");
}

template <std::floating_point T>
std::vector<Tensor<T>> forward(Primitive p, std::span<const Tensor<T>> in, const PrimitiveAttrs& attrs) {
  require_inputs(p, in);
  switch (p) {
    case Primitive::linear: return {linear(in[0], in[1], &in[2])};
    case Primitive::conv1d: return {causal_conv1d(in[0], in[1], in[2])};
    case Primitive::layer_norm: return {layer_norm<T>(in[0], &in[1], &in[2])};
    case Primitive::silu: return {silu(in[0])};
    case Primitive::softplus: return {softplus(in[0])};
    case Primitive::gate: return {gate(in[0], in[1])};
    case Primitive::zoh: {
      auto d = zoh(in[0], in[1], in[2]);
      return {std::move(d.a_bar), std::move(d.b_bar)};
    }
    case Primitive::ssm_scan: return {ssm_scan<T>(in[0], in[1], in[2], in[3])};
    case Primitive::patchify: return {patch_extract(in[0], attrs.patch)};
    case Primitive::unpatchify:
      return {patch_assemble(in[0], attrs.height, attrs.width, attrs.channels, attrs.patch)};
    case Primitive::adaln: return {modulate(in[0], in[1], in[2])};
  }
  throw InvalidArgument("unknown primitive");
}

template <std::floating_point T>
std::vector<Tensor<T>> backward(Primitive p, std::span<const Tensor<T>> in, std::span<const Tensor<T>> up,
                                const PrimitiveAttrs& attrs) {
  require_inputs(p, in);
  const std::size_t outputs = p == Primitive::zoh ? 2 : 1;
  if (up.size() != outputs)
    throw InvalidArgument(std::string(primitive_name(p)) + ": expected " + std::to_string(outputs) +
                          " upstream gradients");
  switch (p) {
    case Primitive::linear: {
      auto g = linear_backward(in[0], in[1], true, up[0]);
      return {std::move(g.dx), std::move(g.dw), std::move(g.db)};
    }
    case Primitive::conv1d: {
      auto g = causal_conv1d_backward(in[0], in[1], up[0]);
      return {std::move(g.dx), std::move(g.dw), std::move(g.db)};
    }
    case Primitive::layer_norm: {
      LayerNormCache<T> cache;
      layer_norm<T>(in[0], &in[1], &in[2], &cache);
      auto g = layer_norm_backward<T>(in[0], &in[1], cache, up[0]);
      return {std::move(g.dx), std::move(g.dgamma), std::move(g.dbeta)};
    }
    case Primitive::silu: return {silu_backward(in[0], up[0])};
    case Primitive::softplus: return {softplus_backward(in[0], up[0])};
    case Primitive::gate: return {gate(up[0], in[1]), gate(up[0], in[0])};
    case Primitive::zoh: {
      auto g = zoh_backward(in[0], in[1], in[2], up[0], up[1]);
      return {std::move(g.da), std::move(g.ddelta), std::move(g.db)};
    }
    case Primitive::ssm_scan: {
      Tensor<T> states;
      ssm_scan(in[0], in[1], in[2], in[3], &states);
      auto g = ssm_scan_backward(in[0], in[1], in[2], in[3], states, up[0]);
      return {std::move(g.dx), std::move(g.da_bar), std::move(g.db_bar), std::move(g.dc)};
    }
    case Primitive::patchify: {
      const auto& img = in[0];
      if (img.rank() != 3) throw InvalidArgument("patchify backward: expected [H x W x C] image");
      return {patch_assemble(up[0], img.dim(0), img.dim(1), img.dim(2), attrs.patch)};
    }
    case Primitive::unpatchify: return {patch_extract(up[0], attrs.patch)};
    case Primitive::adaln: {
      auto g = modulate_backward(in[0], in[2], up[0]);
      return {std::move(g.dx), std::move(g.dshift), std::move(g.dscale)};
    }
  }
  throw InvalidArgument("unknown primitive");
}

#define FLEXFUSE_INSTANTIATE(T)                                                                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                           \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&);       \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>*, const Tensor<T>*, LayerNormCache<T>*);   \
  template LayerNormGrads<T> layer_norm_backward(const Tensor<T>&, const Tensor<T>*,                         \
                                                 const LayerNormCache<T>&, const Tensor<T>&);                \
  template Tensor<T> silu(const Tensor<T>&);                                                                 \
  template Tensor<T> silu_backward(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> softplus(const Tensor<T>&);                                                             \
  template Tensor<T> softplus_backward(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> gate(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> causal_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template ConvGrads<T> causal_conv1d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Discretized<T> zoh(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template ZohGrads<T> zoh_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                    const Tensor<T>&);                                                       \
  template Tensor<T> ssm_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                              Tensor<T>*);                                                                   \
  template ScanGrads<T> ssm_scan_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                          const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> patch_extract(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> patch_assemble(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);   \
  template Tensor<T> modulate(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template ModulateGrads<T> modulate_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template std::vector<Tensor<T>> forward(Primitive, std::span<const Tensor<T>>, const PrimitiveAttrs&);     \
  template std::vector<Tensor<T>> backward(Primitive, std::span<const Tensor<T>>, std::span<const Tensor<T>>, \
                                           const PrimitiveAttrs&);

FLEXFUSE_INSTANTIATE(float)
FLEXFUSE_INSTANTIATE(double)
FLEXFUSE_INSTANTIATE(long double)  // extended-precision reference for gradient checks

#undef FLEXFUSE_INSTANTIATE

}  // namespace flexfuse::nn
