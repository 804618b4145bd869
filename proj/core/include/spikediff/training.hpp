#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spikediff/diffusion.hpp"
#include "spikediff/graph.hpp"
#include "spikediff/network.hpp"

namespace spikediff {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  double grad_clip = 1.0;
  int stage1_iterations = 2000;
  /// Must stay below stage1_iterations / 10 (zero is always allowed).
  int stage2_iterations = 150;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Write a checkpoint every N iterations when N > 0 and a path is set.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  void validate() const;
};

/// Loss became NaN or infinite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedGrads = std::vector<std::pair<std::string, Tensor>>;

/// Adaptive-moment optimizer with bias correction. Moment buffers are created
/// on first use and keyed by parameter name.
class Adam {
 public:
  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  explicit Adam(const TrainConfig& config)
      : Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps) {}

  void step(ParameterStore& store, const NamedGrads& grads);
  std::int64_t steps() const noexcept { return steps_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(NamedGrads& grads, double max_norm);

struct DiffusionBatch {
  Tensor x_t;
  Tensor eps;
  std::vector<int> t;
};

/// Uniform t in [1, T] and standard normal eps per sample of x0.
DiffusionBatch draw_diffusion_batch(const NoiseSchedule& schedule, const Tensor& x0, std::mt19937_64& rng);

using NoisePredictor = std::function<Var<float>(Graph<float>&, Var<float> x_t, std::span<const int> t)>;

/// mean((predictor(x_t, t) - eps)^2) for a drawn batch.
Var<float> diffusion_loss(Graph<float>& g, const NoisePredictor& predictor, const DiffusionBatch& batch);
Var<float> diffusion_loss(Graph<float>& g, const NoisePredictor& predictor, const NoiseSchedule& schedule,
                          const Tensor& x0, std::mt19937_64& rng);

/// `count` rows of `data` drawn uniformly with replacement.
Tensor draw_rows(const Tensor& data, int count, std::mt19937_64& rng);

struct TrainResult {
  std::vector<double> losses;
};

using TrainObserver = std::function<void(int iteration, double loss)>;

/// Stage 1: optimizes the pre-spike network in place.
TrainResult train_stage1(SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data,
                         const TrainConfig& config, const TrainObserver& observer = {});

/// Stage 2: converts to TSM and jointly optimizes weights and temporal
/// parameters with a fresh optimizer. The input network is left untouched.
SpikingNet finetune_stage2(const SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data,
                           const TrainConfig& config, TrainResult* result = nullptr,
                           const TrainObserver& observer = {});

/// Mean diffusion loss in eval norm mode over a fixed stream of `batches`
/// batches drawn from `seed`. Two networks evaluated with the same seed see
/// identical x0, t and eps.
double evaluate_loss(SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data, std::uint64_t seed,
                     int batches, int batch_size);

/// Mean of the first / last `window` entries (fewer if the curve is short).
double smoothed_head(std::span<const double> losses, std::size_t window);
double smoothed_tail(std::span<const double> losses, std::size_t window);

}  // namespace spikediff
