#include "flexfuse/oracles/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace flexfuse::oracle {

using nn::Primitive;

template <>
GradcheckOptions default_gradcheck_options<float>() {
  return {1e-4, 1e-3, 1e-6, 3};
}

template <>
GradcheckOptions default_gradcheck_options<double>() {
  return {1e-4, 1e-6, 1e-7, 3};
}

namespace {

template <std::floating_point T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

template <std::floating_point T>
T project(const std::vector<Tensor<T>>& outs, const std::vector<Tensor<T>>& w) {
  T s = 0;
  for (std::size_t k = 0; k < outs.size(); ++k)
    for (std::size_t i = 0; i < outs[k].size(); ++i) s += outs[k][i] * w[k][i];
  return s;
}

struct Tracker {
  GradcheckReport& report;
  const GradcheckOptions& opts;

  void record(const std::string& where, double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (rel > report.worst || !std::isfinite(rel)) {
      report.worst = std::isfinite(rel) ? rel : INFINITY;
      std::ostringstream os;
      os << where << ": analytic " << analytic << " numeric " << numeric;
      report.detail = os.str();
    }
    if (!(rel < opts.tolerance)) report.passed = false;
  }
};

std::vector<std::size_t> pick_coords(std::size_t size, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(size);
  for (std::size_t i = 0; i < size; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(count, size));
  return all;
}

// Differences are taken through the long double instantiation so that the
// reference is far more accurate than either precision under test.
using Ref = long double;

template <std::floating_point T>
std::vector<Tensor<Ref>> widen(const std::vector<Tensor<T>>& ts) {
  std::vector<Tensor<Ref>> out;
  for (const auto& t : ts) out.push_back(t.template cast<Ref>());
  return out;
}

// Five-point central stencil.
double central_difference(Ref& slot, double step, bool relative, const std::function<Ref()>& loss) {
  const Ref saved = slot;
  const Ref h = relative ? step * std::abs(saved) : step * std::max(Ref(1), std::abs(saved));
  const auto at = [&](Ref offset) {
    slot = saved + offset;
    return loss();
  };
  const Ref d = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
  slot = saved;
  return static_cast<double>(d);
}

}  // namespace

template <std::floating_point T>
std::vector<Tensor<T>> random_primitive_inputs(Primitive p, std::uint64_t seed, nn::PrimitiveAttrs& attrs,
                                               bool series) {
  std::mt19937_64 rng(seed);
  attrs = {};
  switch (p) {
    case Primitive::linear:
      return {uniform<T>({4, 5}, rng, -1, 1), uniform<T>({3, 5}, rng, -1, 1), uniform<T>({3}, rng, -1, 1)};
    case Primitive::conv1d:
      return {uniform<T>({6, 3}, rng, -1, 1), uniform<T>({3, 4}, rng, -1, 1), uniform<T>({3}, rng, -1, 1)};
    case Primitive::layer_norm:
      return {uniform<T>({4, 6}, rng, -2, 2), uniform<T>({6}, rng, 0.5, 1.5), uniform<T>({6}, rng, -1, 1)};
    case Primitive::silu:
    case Primitive::softplus: return {uniform<T>({4, 5}, rng, -3, 3)};
    case Primitive::gate: return {uniform<T>({4, 5}, rng, -1, 1), uniform<T>({4, 5}, rng, -1, 1)};
    case Primitive::zoh:
      if (series)
        return {uniform<T>({3, 4}, rng, -8e-5, -1e-5), uniform<T>({5, 3}, rng, 0.5, 1.0),
                uniform<T>({5, 4}, rng, -1, 1)};
      return {uniform<T>({3, 4}, rng, -2.0, -0.3), uniform<T>({5, 3}, rng, 0.05, 0.5),
              uniform<T>({5, 4}, rng, -1, 1)};
    case Primitive::ssm_scan:
      return {uniform<T>({6, 3}, rng, -1, 1), uniform<T>({6, 3, 2}, rng, 0.3, 0.95),
              uniform<T>({6, 3, 2}, rng, -1, 1), uniform<T>({6, 2}, rng, -1, 1)};
    case Primitive::patchify:
      attrs.patch = 2;
      return {uniform<T>({4, 4, 2}, rng, -1, 1)};
    case Primitive::unpatchify:
      attrs = {2, 4, 4, 2};
      return {uniform<T>({4, 8}, rng, -1, 1)};
    case Primitive::adaln:
      return {uniform<T>({4, 5}, rng, -1, 1), uniform<T>({5}, rng, -1, 1), uniform<T>({5}, rng, -1, 1)};
  }
  throw InvalidArgument("random_primitive_inputs: unknown primitive");
}

template <std::floating_point T>
GradcheckReport check_primitive(Primitive p, std::uint64_t seed, const GradcheckOptions& opts, bool series) {
  nn::PrimitiveAttrs attrs;
  auto inputs = random_primitive_inputs<T>(p, seed, attrs, series);
  GradcheckReport report;
  report.name = std::string(nn::primitive_name(p)) + (series ? " (series branch)" : "");

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto outs = nn::forward<T>(p, inputs, attrs);
  std::vector<Tensor<T>> w;
  for (const auto& o : outs) w.push_back(uniform<T>(o.shape(), rng, -1, 1));
  const auto grads = nn::backward<T>(p, inputs, w, attrs);

  Tracker track{report, opts};
  auto ref_inputs = widen(inputs);
  const auto ref_w = widen(w);
  const auto loss = [&] { return project(nn::forward<Ref>(p, ref_inputs, attrs), ref_w); };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const bool relative = series && p == Primitive::zoh && k == 0;
    for (std::size_t i : pick_coords(inputs[k].size(), opts.coords_per_tensor, rng)) {
      const double numeric = central_difference(ref_inputs[k][i], opts.step, relative, loss);
      track.record("input " + std::to_string(k) + "[" + std::to_string(i) + "]", grads[k][i], numeric);
    }
  }
  return report;
}

DfmConfig gradcheck_config() { return {2, 8, 1, 2, 8, 4, 3}; }

template <std::floating_point T>
std::vector<GradcheckReport> check_model(const DfmConfig& cfg, std::uint64_t seed, const GradcheckOptions& opts) {
  std::mt19937_64 rng(seed);
  auto params = DfmParams<double>::init(cfg, seed).template cast<T>();
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  params.for_each([&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.storage()) v = static_cast<T>(static_cast<double>(v) + jitter(rng));
  });

  const std::size_t side = 2 * cfg.patch;
  Tensor<T> image = uniform<T>({side, side, cfg.channels}, rng, -1, 1);
  const double t = 37.0;
  const Tensor<T> w_eps = uniform<T>({side, side, cfg.channels}, rng, -1, 1);
  const Tensor<T> w_cov = uniform<T>({side, side, cfg.channels}, rng, -1, 1);

  auto ref_params = params.template cast<Ref>();
  Tensor<Ref> ref_image = image.template cast<Ref>();
  const std::vector<Tensor<Ref>> ref_w{w_eps.template cast<Ref>(), w_cov.template cast<Ref>()};
  const auto loss = [&] {
    const auto out = dfm_forward(ref_image, t, ref_params);
    return project<Ref>({out.eps, out.cov}, ref_w);
  };

  DfmTape<T> tape;
  dfm_forward(image, t, params, &tape);
  auto grads = DfmParams<T>::zeros(cfg);
  const Tensor<T> d_image = dfm_backward(tape, params, w_eps, &w_cov, grads);

  std::vector<std::pair<std::string, Tensor<Ref>*>> slots;
  ref_params.for_each([&](const std::string& name, Tensor<Ref>& tensor) { slots.emplace_back(name, &tensor); });
  std::vector<const Tensor<T>*> grad_slots;
  grads.for_each([&](const std::string&, const Tensor<T>& tensor) { grad_slots.push_back(&tensor); });

  std::vector<GradcheckReport> reports;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    GradcheckReport rep;
    rep.name = slots[s].first;
    Tracker track{rep, opts};
    for (std::size_t i : pick_coords(slots[s].second->size(), opts.coords_per_tensor, rng)) {
      const double numeric = central_difference((*slots[s].second)[i], opts.step, false, loss);
      track.record("[" + std::to_string(i) + "]", (*grad_slots[s])[i], numeric);
    }
    reports.push_back(std::move(rep));
  }
  GradcheckReport img;
  img.name = "input image";
  Tracker track{img, opts};
  for (std::size_t i : pick_coords(image.size(), opts.coords_per_tensor, rng)) {
    const double numeric = central_difference(ref_image[i], opts.step, false, loss);
    track.record("[" + std::to_string(i) + "]", d_image[i], numeric);
  }
  reports.push_back(std::move(img));
  return reports;
}

#define FLEXFUSE_INSTANTIATE(T)                                                                            \
  template std::vector<Tensor<T>> random_primitive_inputs<T>(Primitive, std::uint64_t, nn::PrimitiveAttrs&, \
                                                             bool);                                        \
  template GradcheckReport check_primitive<T>(Primitive, std::uint64_t, const GradcheckOptions&, bool);    \
  template std::vector<GradcheckReport> check_model<T>(const DfmConfig&, std::uint64_t, const GradcheckOptions&);

FLEXFUSE_INSTANTIATE(float)
FLEXFUSE_INSTANTIATE(double)

#undef FLEXFUSE_INSTANTIATE

}  // namespace flexfuse::oracle
