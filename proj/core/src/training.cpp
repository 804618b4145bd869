#include "spikediff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spikediff/checkpoint.hpp"
#include "spikediff/ops.hpp"

namespace spikediff {

namespace {

// Keeps stage-2 draws apart from the stage-1 stream under the same seed.
constexpr std::uint64_t kStage2Stream = 0x9e3779b97f4a7c15ULL;

TrainResult run_iterations(SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data,
                           const TrainConfig& config, int iterations, std::uint64_t seed,
                           const TrainObserver& observer) {
  if (data.rank() < 1 || data.dim(0) == 0) throw std::invalid_argument("training needs a non-empty dataset");
  Shape item(data.shape().begin() + 1, data.shape().end());
  if (item != net.config().sample_shape()) {
    throw ShapeError("dataset samples " + shape_str(item) + " do not match model input " +
                     shape_str(net.config().sample_shape()));
  }
  std::mt19937_64 rng(seed);
  Adam adam(config);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(iterations));

  for (int it = 0; it < iterations; ++it) {
    Tensor x0 = draw_rows(data, config.batch_size, rng);
    Graph<float> g;
    ParamBinding params(g, net.params(), true);
    NoisePredictor predictor = [&](Graph<float>&, Var<float> x_t, std::span<const int> t) {
      return net_forward(net, params, x_t, t, NormMode::Train);
    };
    Var<float> loss = diffusion_loss(g, predictor, schedule, x0, rng);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw TrainingDiverged("loss is " + std::to_string(value) + " at iteration " + std::to_string(it));
    }
    auto grads = g.backward(loss);
    NamedGrads named;
    named.reserve(params.bound().size());
    for (const auto& [name, var] : params.bound()) named.emplace_back(name, grads.of(var));
    clip_global_norm(named, config.grad_clip);
    adam.step(net.params(), named);

    result.losses.push_back(value);
    if (observer) observer(it, value);
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (it + 1) % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, net);
    }
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be > 0");
  if (stage1_iterations < 0 || stage2_iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (stage2_iterations > 0 && static_cast<std::int64_t>(stage2_iterations) * 10 >= stage1_iterations) {
    throw std::invalid_argument("stage2_iterations must be below stage1_iterations / 10");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& store, const NamedGrads& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& [name, grad] : grads) {
    Tensor& w = store.at(name);
    if (w.shape() != grad.shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " + shape_str(grad.shape()));
    }
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = grad[i];
      mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * gi;
      mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * gi * gi;
      const double update = (mom.m[i] / c1) / (std::sqrt(mom.v[i] / c2) + eps_);
      w[i] = static_cast<float>(w[i] - lr_ * update);
    }
  }
}

double clip_global_norm(NamedGrads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) {
    for (float v : g.data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (auto& v : g.data()) v = static_cast<float>(v * k);
    }
  }
  return norm;
}

Tensor draw_rows(const Tensor& data, int count, std::mt19937_64& rng) {
  if (data.rank() < 1 || data.dim(0) == 0) throw std::invalid_argument("cannot draw from an empty dataset");
  if (count < 1) throw std::invalid_argument("batch must be non-empty");
  const std::int64_t d = static_cast<std::int64_t>(data.size()) / data.dim(0);
  std::uniform_int_distribution<std::int64_t> pick(0, data.dim(0) - 1);
  Shape shape = data.shape();
  shape[0] = count;
  Tensor out(shape);
  for (int b = 0; b < count; ++b) {
    std::copy_n(data.data().begin() + pick(rng) * d, d, out.data().begin() + b * d);
  }
  return out;
}

DiffusionBatch draw_diffusion_batch(const NoiseSchedule& schedule, const Tensor& x0, std::mt19937_64& rng) {
  if (x0.rank() < 1 || x0.dim(0) == 0) throw std::invalid_argument("diffusion batch must be non-empty");
  std::uniform_int_distribution<int> step(1, schedule.steps());
  DiffusionBatch b;
  b.t.resize(static_cast<std::size_t>(x0.dim(0)));
  for (auto& t : b.t) t = step(rng);
  b.eps = standard_normal(x0.shape(), rng);
  b.x_t = q_sample(schedule, x0, b.t, b.eps);
  return b;
}

Var<float> diffusion_loss(Graph<float>& g, const NoisePredictor& predictor, const DiffusionBatch& batch) {
  Var<float> eps_hat = predictor(g, g.constant(batch.x_t), batch.t);
  return mse(eps_hat, g.constant(batch.eps));
}

Var<float> diffusion_loss(Graph<float>& g, const NoisePredictor& predictor, const NoiseSchedule& schedule,
                          const Tensor& x0, std::mt19937_64& rng) {
  return diffusion_loss(g, predictor, draw_diffusion_batch(schedule, x0, rng));
}

TrainResult train_stage1(SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data,
                         const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  if (net.block_type() != BlockType::PreSpike) throw std::logic_error("stage 1 expects a pre-spike network");
  return run_iterations(net, schedule, data, config, config.stage1_iterations, config.seed, observer);
}

SpikingNet finetune_stage2(const SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data,
                           const TrainConfig& config, TrainResult* result, const TrainObserver& observer) {
  config.validate();
  SpikingNet tsm = convert_to_tsm(net);
  auto r = run_iterations(tsm, schedule, data, config, config.stage2_iterations, config.seed ^ kStage2Stream,
                          observer);
  if (result) *result = std::move(r);
  return tsm;
}

double evaluate_loss(SpikingNet& net, const NoiseSchedule& schedule, const Tensor& data, std::uint64_t seed,
                     int batches, int batch_size) {
  if (batches < 1) throw std::invalid_argument("batches must be >= 1");
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int b = 0; b < batches; ++b) {
    Tensor x0 = draw_rows(data, batch_size, rng);
    auto batch = draw_diffusion_batch(schedule, x0, rng);
    Tensor eps_hat = predict(net, batch.x_t, batch.t);
    double sq = 0.0;
    for (std::size_t i = 0; i < eps_hat.size(); ++i) {
      const double d = static_cast<double>(eps_hat[i]) - batch.eps[i];
      sq += d * d;
    }
    total += sq / static_cast<double>(eps_hat.size());
  }
  return total / batches;
}

double smoothed_head(std::span<const double> losses, std::size_t window) {
  if (losses.empty()) throw std::invalid_argument("empty loss curve");
  const std::size_t n = std::min(window, losses.size());
  return std::accumulate(losses.begin(), losses.begin() + n, 0.0) / n;
}

double smoothed_tail(std::span<const double> losses, std::size_t window) {
  if (losses.empty()) throw std::invalid_argument("empty loss curve");
  const std::size_t n = std::min(window, losses.size());
  return std::accumulate(losses.end() - n, losses.end(), 0.0) / n;
}

}  // namespace spikediff
