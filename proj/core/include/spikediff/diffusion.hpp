#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spikediff/tensor.hpp"

namespace spikediff {

/// Discrete linear-beta noise schedule over steps 1..T. Index 0 denotes clean
/// data: alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_first = 1e-4, double beta_last = 0.02);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  /// Posterior variance of the single-step reverse kernel, t >= 1.
  double posterior_variance(int t) const;
  /// Half log-SNR, log(sqrt(abar) / sqrt(1 - abar)). Infinite at t = 0.
  double log_snr(int t) const;

  void check_step(int t) const;

 private:
  std::vector<double> beta_;       // beta_[0] unused
  std::vector<double> alpha_bar_;  // alpha_bar_[0] == 1
};

/// `count` steps spread uniformly over [1, T], both endpoints included.
std::vector<int> uniform_trajectory(int diffusion_steps, int count);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. `t` holds one step per sample
/// (leading axis) or a single step shared by all.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, std::span<const int> t, const Tensor& eps);

/// Ancestral step from t to s < t (s = t - 1 is the ordinary single step):
///   x_s = (x_t - beta_ts / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_ts) + sigma z
/// with alpha_ts = abar_t / abar_s and sigma^2 the q-posterior variance.
/// Noise is suppressed when s == 0.
Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s,
                 const Tensor& z);

/// Predicted clean sample (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor predict_x0(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t);

/// Deterministic step t -> s: sqrt(abar_s) x0_hat + sqrt(1 - abar_s) eps_hat.
Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s);

/// The same update in log-SNR form:
///   x_s = (a_s / a_t) x_t - sigma_s (e^h - 1) eps_hat,  h = lambda_s - lambda_t.
Tensor ddim_step_exponential(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t,
                             int s);

/// Per-step quantities of the optimal-variance reverse kernel from t to s.
struct AnalyticCoefficients {
  double lambda2 = 0.0;  // q-posterior variance
  double gamma = 0.0;
  double variance = 0.0;  // clamped optimal variance
  double x0_coef = 0.0;   // sqrt(abar_s)
  double eps_coef = 0.0;  // sqrt(1 - abar_s - lambda2)
};

AnalyticCoefficients analytic_coefficients(const NoiseSchedule& schedule, int t, int s, double h);

Tensor analytic_dpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s,
                         double h, const Tensor& z);

/// Anything that predicts the noise in x_t. Threshold scaling is a no-op for
/// models without spiking thresholds.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;
  virtual Tensor predict(const Tensor& x_t, std::span<const int> t) = 0;
  virtual double threshold_scale() const { return 1.0; }
  virtual void set_threshold_scale(double) {}
};

/// Exact posterior-mean noise for N(0, I) data: sqrt(1 - abar_t) x_t.
class GaussianOracleModel final : public NoiseModel {
 public:
  explicit GaussianOracleModel(const NoiseSchedule& schedule) : schedule_(&schedule) {}
  Tensor predict(const Tensor& x_t, std::span<const int> t) override;

 private:
  const NoiseSchedule* schedule_;
};

/// Monte-Carlo estimate of E||eps_hat||^2 / d at each trajectory step.
struct HStats {
  std::vector<int> steps;
  std::vector<double> h;

  double at(int t) const;
};

/// `data` is [M, ...]; each draw picks a sample uniformly. Draws are
/// evaluated in chunks of `batch`.
HStats estimate_h(NoiseModel& model, const NoiseSchedule& schedule, const Tensor& data,
                  std::span<const int> trajectory, int n_mc, std::uint64_t seed, int batch = 1024);

enum class Solver { Ddpm, Ddim, Analytic };

Solver parse_solver(const std::string& name);
std::string solver_name(Solver solver);

struct SampleOptions {
  Solver solver = Solver::Ddim;
  int n_steps = 50;
  double rho = 1.0;
  std::uint64_t seed = 0;
  /// Model evaluation chunk size. Results do not depend on it.
  int batch = 256;
  const HStats* hstats = nullptr;
};

/// Draws x_T ~ N(0, I) and runs the chosen reverse solver down to step 0.
/// Thresholds are scaled by `rho` for the duration of the call.
Tensor sample(NoiseModel& model, const NoiseSchedule& schedule, const Shape& sample_shape, int count,
              const SampleOptions& options);

/// Restores a model's threshold scale on destruction.
class GuidanceScope {
 public:
  GuidanceScope(NoiseModel& model, double rho);
  ~GuidanceScope();
  GuidanceScope(const GuidanceScope&) = delete;
  GuidanceScope& operator=(const GuidanceScope&) = delete;

 private:
  NoiseModel& model_;
  double previous_;
};

/// Fills a tensor of `shape` with standard normal draws.
Tensor standard_normal(const Shape& shape, std::mt19937_64& rng);

}  // namespace spikediff
