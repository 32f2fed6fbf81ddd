#include "flexfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <thread>

#include "flexfuse/imageio.hpp"

namespace flexfuse {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch == 0) throw InvalidArgument("batch size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("Adam moments must lie in [0,1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be positive");
  if (!(clip_norm > 0.0)) throw InvalidArgument("gradient clip norm must be positive");
  if (crop == 0) throw InvalidArgument("crop size must be positive");
}

namespace {

std::size_t resolve_threads(std::size_t requested, std::size_t work) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, work));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers, contiguous chunks.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = resolve_threads(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <std::floating_point T>
void add_into(DfmParams<T>& dst, const DfmParams<T>& src) {
  std::vector<const Tensor<T>*> s;
  src.for_each([&](const std::string&, const Tensor<T>& t) { s.push_back(&t); });
  std::size_t i = 0;
  dst.for_each([&](const std::string&, Tensor<T>& t) { t += *s[i++]; });
}

Grid<float> random_crop(const Grid<float>& img, std::size_t crop, std::mt19937_64& rng) {
  const std::size_t h = img.rows(), w = img.cols();
  const std::size_t oy = h > crop ? std::uniform_int_distribution<std::size_t>(0, h - crop)(rng) : 0;
  const std::size_t ox = w > crop ? std::uniform_int_distribution<std::size_t>(0, w - crop)(rng) : 0;
  Grid<float> out(crop, crop);
  for (std::size_t r = 0; r < crop; ++r)
    for (std::size_t c = 0; c < crop; ++c)
      out(r, c) = img(reflect_index(static_cast<std::ptrdiff_t>(oy + r), h),
                      reflect_index(static_cast<std::ptrdiff_t>(ox + c), w));
  return out;
}

}  // namespace

template <std::floating_point T>
std::vector<DsmDraw<T>> draw_noise(std::span<const Grid<T>> batch, const NoiseSchedule& sched,
                                   std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> step(0, sched.steps() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<DsmDraw<T>> draws;
  draws.reserve(batch.size());
  for (const auto& img : batch) {
    DsmDraw<T> d{step(rng), Grid<T>(img.rows(), img.cols())};
    for (auto& v : d.noise.storage()) v = static_cast<T>(normal(rng));
    draws.push_back(std::move(d));
  }
  return draws;
}

template <std::floating_point T>
DsmResult<T> dsm_loss(const DfmParams<T>& params, std::span<const Grid<T>> batch,
                      std::span<const DsmDraw<T>> draws, const NoiseSchedule& sched, std::size_t threads) {
  if (batch.empty()) throw InvalidArgument("dsm_loss: empty batch");
  if (draws.size() != batch.size()) throw InvalidArgument("dsm_loss: one draw per sample required");

  std::size_t total = 0;
  for (const auto& img : batch) total += img.size();
  const T scale = static_cast<T>(2.0 / static_cast<double>(total));

  std::vector<double> sample_loss(batch.size());
  std::vector<DfmParams<T>> sample_grads(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto& draw = draws[i];
    const Grid<T> ft = forward_perturb(batch[i], draw.t, draw.noise, sched);
    DfmTape<T> tape;
    const auto out = dfm_forward(grid_to_image(ft), static_cast<double>(draw.t), params, &tape);
    Tensor<T> d_eps = out.eps.zeros_like();
    double sse = 0.0;
    for (std::size_t k = 0; k < d_eps.size(); ++k) {
      const double diff = static_cast<double>(out.eps[k]) - static_cast<double>(draw.noise[k]);
      sse += diff * diff;
      d_eps[k] = static_cast<T>(diff) * scale;
    }
    sample_loss[i] = sse;
    sample_grads[i] = DfmParams<T>::zeros(params.config);
    dfm_backward<T>(tape, params, d_eps, nullptr, sample_grads[i]);
  });

  DsmResult<T> result{0.0, std::move(sample_grads[0])};
  double sse = sample_loss[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    add_into(result.grads, sample_grads[i]);
    sse += sample_loss[i];
  }
  result.loss = sse / static_cast<double>(total);
  return result;
}

template <std::floating_point T>
DsmResult<T> dsm_loss(const DfmParams<T>& params, std::span<const Grid<T>> batch, const NoiseSchedule& sched,
                      std::mt19937_64& rng, std::size_t threads) {
  if (batch.empty()) throw InvalidArgument("dsm_loss: empty batch");
  const auto draws = draw_noise(batch, sched, rng);
  return dsm_loss<T>(params, batch, draws, sched, threads);
}

template <std::floating_point T>
double clip_global_norm(DfmParams<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const Tensor<T>& t) {
    for (T v : t.storage()) sq += static_cast<double>(v) * static_cast<double>(v);
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    grads.for_each([&](const std::string&, Tensor<T>& t) {
      for (T& v : t.storage()) v *= s;
    });
  }
  return norm;
}

template <std::floating_point T>
Adam<T>::Adam(const DfmParams<T>& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  like.for_each([&](const std::string&, const Tensor<T>& t) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  });
}

template <std::floating_point T>
void Adam<T>::step(DfmParams<T>& params, const DfmParams<T>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<const Tensor<T>*> g;
  grads.for_each([&](const std::string&, const Tensor<T>& t) { g.push_back(&t); });
  std::size_t k = 0;
  params.for_each([&](const std::string&, Tensor<T>& p) {
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& gt = *g[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gt[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      p[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
    ++k;
  });
}

TrainResult train(const TrainConfig& cfg, const std::vector<Grid<float>>& corpus, const DfmConfig& arch,
                  const NoiseSchedule& sched, const TrainProgress& progress) {
  cfg.validate();
  arch.validate();
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  if (arch.channels != 1) throw InvalidArgument("training operates on single-channel luma (c = 1)");
  if (cfg.crop % arch.patch != 0)
    throw InvalidArgument("crop size " + std::to_string(cfg.crop) + " is not a multiple of patch size " +
                          std::to_string(arch.patch));

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.checkpoint.arch = arch;
  result.checkpoint.diffusion_steps = sched.steps();
  result.checkpoint.schedule = sched.kind();
  auto& params = result.checkpoint.params;
  params = DfmParams<float>::init(arch, rng());

  Adam<float> adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<Grid<float>> batch(cfg.batch);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& b : batch) b = random_crop(corpus[pick(rng)], cfg.crop, rng);
    auto res = dsm_loss<float>(params, batch, sched, rng, cfg.threads);
    if (!std::isfinite(res.loss))
      throw NumericalError("training loss became non-finite at step " + std::to_string(step));
    clip_global_norm(res.grads, cfg.clip_norm);
    adam.step(params, res.grads);
    result.losses.push_back({step, res.loss});
    if (progress) progress(result.losses.back());
  }
  return result;
}

void write_loss_csv(const std::vector<LossRecord>& losses, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write loss log " + path.string());
  out << "step,loss\n" << std::setprecision(9);
  for (const auto& r : losses) out << r.step << ',' << r.loss << '\n';
  if (!out) throw Error("short write to " + path.string());
}

#define FLEXFUSE_INSTANTIATE(T)                                                                            \
  template std::vector<DsmDraw<T>> draw_noise(std::span<const Grid<T>>, const NoiseSchedule&,              \
                                              std::mt19937_64&);                                           \
  template DsmResult<T> dsm_loss(const DfmParams<T>&, std::span<const Grid<T>>, std::span<const DsmDraw<T>>, \
                                 const NoiseSchedule&, std::size_t);                                       \
  template DsmResult<T> dsm_loss(const DfmParams<T>&, std::span<const Grid<T>>, const NoiseSchedule&,      \
                                 std::mt19937_64&, std::size_t);                                           \
  template double clip_global_norm(DfmParams<T>&, double);                                                 \
  template class Adam<T>;

FLEXFUSE_INSTANTIATE(float)
FLEXFUSE_INSTANTIATE(double)

#undef FLEXFUSE_INSTANTIATE

}  // namespace flexfuse
