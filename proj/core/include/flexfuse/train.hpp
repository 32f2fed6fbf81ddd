#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "flexfuse/checkpoint.hpp"
#include "flexfuse/dfm.hpp"
#include "flexfuse/grid.hpp"
#include "flexfuse/schedule.hpp"

namespace flexfuse {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch = 8;
  std::size_t steps = 2000;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::size_t crop = 16;     // training patch extent; larger images are randomly cropped
  std::size_t threads = 0;   // 0 = hardware concurrency

  void validate() const;
};

struct LossRecord {
  std::size_t step;
  double loss;
};

/// One noising draw for one training sample.
template <std::floating_point T>
struct DsmDraw {
  std::size_t t;
  Grid<T> noise;
};

template <std::floating_point T>
struct DsmResult {
  double loss = 0.0;
  DfmParams<T> grads;
};

/// Noise-prediction loss mean((eps_hat(f_t, t) - eps)^2) and its parameter
/// gradient for a fixed set of draws. Per-sample work may run on `threads`
/// workers; the reduction order is fixed so results do not depend on it.
template <std::floating_point T>
DsmResult<T> dsm_loss(const DfmParams<T>& params, std::span<const Grid<T>> batch,
                      std::span<const DsmDraw<T>> draws, const NoiseSchedule& sched, std::size_t threads = 1);

/// Same, drawing t ~ U{0..T-1} and eps ~ N(0, I) from rng.
template <std::floating_point T>
DsmResult<T> dsm_loss(const DfmParams<T>& params, std::span<const Grid<T>> batch, const NoiseSchedule& sched,
                      std::mt19937_64& rng, std::size_t threads = 1);

template <std::floating_point T>
std::vector<DsmDraw<T>> draw_noise(std::span<const Grid<T>> batch, const NoiseSchedule& sched,
                                   std::mt19937_64& rng);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <std::floating_point T>
double clip_global_norm(DfmParams<T>& grads, double max_norm);

template <std::floating_point T>
class Adam {
 public:
  Adam(const DfmParams<T>& like, double lr, double beta1, double beta2, double eps);
  void step(DfmParams<T>& params, const DfmParams<T>& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> losses;
};

using TrainProgress = std::function<void(const LossRecord&)>;

/// Noise-prediction pretraining. Deterministic in cfg.seed. Throws
/// NumericalError if the loss becomes non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<Grid<float>>& corpus, const DfmConfig& arch,
                  const NoiseSchedule& sched, const TrainProgress& progress = {});

void write_loss_csv(const std::vector<LossRecord>& losses, const std::filesystem::path& path);

}  // namespace flexfuse
