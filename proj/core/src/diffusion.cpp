#include "spikediff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace spikediff {

namespace {

/// Step of sample n when `t` is either per-sample or shared.
int step_of(std::span<const int> t, std::int64_t n, std::int64_t batch) {
  if (t.size() == 1) return t[0];
  if (static_cast<std::int64_t>(t.size()) != batch) {
    throw ShapeError("got " + std::to_string(t.size()) + " time steps for a batch of " + std::to_string(batch));
  }
  return t[static_cast<std::size_t>(n)];
}

std::int64_t per_sample(const Tensor& x) {
  if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("expected a non-empty batch, got " + shape_str(x.shape()));
  return static_cast<std::int64_t>(x.size()) / x.dim(0);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(b.shape()) + " does not match " +
                     shape_str(a.shape()));
  }
}

/// out = a * x + b * e + c * z, elementwise, evaluated in double.
Tensor affine(const Tensor& x, double a, const Tensor& e, double b, const Tensor* z = nullptr, double c = 0.0) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = a * x[i] + b * e[i];
    if (z) v += c * (*z)[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

void check_pair(const NoiseSchedule& schedule, int t, int s) {
  schedule.check_step(t);
  if (s < 0 || s >= t) {
    throw std::out_of_range("reverse step target " + std::to_string(s) + " must lie in [0, " + std::to_string(t) +
                            ")");
  }
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_first, double beta_last) {
  if (steps < 1) throw std::invalid_argument("diffusion steps must be >= 1");
  if (!(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0)) {
    throw std::invalid_argument("need 0 < beta_first <= beta_last < 1");
  }
  NoiseSchedule s;
  s.beta_.assign(steps + 1, 0.0);
  s.alpha_bar_.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    s.beta_[t] = steps == 1 ? beta_first : beta_first + (beta_last - beta_first) * (t - 1) / (steps - 1);
    s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t]);
  }
  return s;
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw std::out_of_range("alpha_bar index " + std::to_string(t));
  return alpha_bar_[t];
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  return beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
}

double NoiseSchedule::log_snr(int t) const {
  const double ab = alpha_bar(t);
  if (ab >= 1.0) return std::numeric_limits<double>::infinity();
  return 0.5 * (std::log(ab) - std::log1p(-ab));
}

std::vector<int> uniform_trajectory(int diffusion_steps, int count) {
  if (count < 1 || count > diffusion_steps) {
    throw std::invalid_argument("trajectory length " + std::to_string(count) + " outside [1, " +
                                std::to_string(diffusion_steps) + "]");
  }
  if (count == 1) return {diffusion_steps};
  std::vector<int> out(count);
  const std::int64_t span = diffusion_steps - 1;
  const std::int64_t den = count - 1;
  for (std::int64_t i = 0; i < count; ++i) {
    out[i] = static_cast<int>(1 + (2 * i * span + den) / (2 * den));
  }
  return out;
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, std::span<const int> t, const Tensor& eps) {
  require_same_shape(x0, eps, "q_sample noise");
  const std::int64_t n = x0.dim(0);
  const std::int64_t d = per_sample(x0);
  Tensor out(x0.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    const int step = step_of(t, b, n);
    schedule.check_step(step);
    const double ab = schedule.alpha_bar(step);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::int64_t i = b * d; i < (b + 1) * d; ++i) out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
  }
  return out;
}

Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s,
                 const Tensor& z) {
  check_pair(schedule, t, s);
  require_same_shape(x_t, eps_hat, "ddpm_step eps_hat");
  const double ab_t = schedule.alpha_bar(t), ab_s = schedule.alpha_bar(s);
  const double alpha_ts = ab_t / ab_s;
  const double beta_ts = 1.0 - alpha_ts;
  const double inv = 1.0 / std::sqrt(alpha_ts);
  const double sigma = s == 0 ? 0.0 : std::sqrt(beta_ts * (1.0 - ab_s) / (1.0 - ab_t));
  if (sigma == 0.0) return affine(x_t, inv, eps_hat, -inv * beta_ts / std::sqrt(1.0 - ab_t));
  require_same_shape(x_t, z, "ddpm_step noise");
  return affine(x_t, inv, eps_hat, -inv * beta_ts / std::sqrt(1.0 - ab_t), &z, sigma);
}

Tensor predict_x0(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t) {
  schedule.check_step(t);
  require_same_shape(x_t, eps_hat, "predict_x0 eps_hat");
  const double ab = schedule.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return affine(x_t, inv, eps_hat, -std::sqrt(1.0 - ab) * inv);
}

Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s) {
  check_pair(schedule, t, s);
  require_same_shape(x_t, eps_hat, "ddim_step eps_hat");
  const double ab_t = schedule.alpha_bar(t), ab_s = schedule.alpha_bar(s);
  const double sa_t = std::sqrt(ab_t), ss_t = std::sqrt(1.0 - ab_t);
  const double sa_s = std::sqrt(ab_s), ss_s = std::sqrt(1.0 - ab_s);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0 = (x_t[i] - ss_t * eps_hat[i]) / sa_t;
    out[i] = static_cast<float>(sa_s * x0 + ss_s * eps_hat[i]);
  }
  return out;
}

Tensor ddim_step_exponential(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t,
                             int s) {
  check_pair(schedule, t, s);
  require_same_shape(x_t, eps_hat, "ddim_step_exponential eps_hat");
  const double a_t = std::sqrt(schedule.alpha_bar(t)), sig_t = std::sqrt(1.0 - schedule.alpha_bar(t));
  const double a_s = std::sqrt(schedule.alpha_bar(s)), sig_s = std::sqrt(1.0 - schedule.alpha_bar(s));
  // sigma_s (e^h - 1) tends to a_s sigma_t / a_t as s reaches clean data.
  const double coef =
      s == 0 ? a_s * sig_t / a_t : sig_s * std::expm1(schedule.log_snr(s) - schedule.log_snr(t));
  return affine(x_t, a_s / a_t, eps_hat, -coef);
}

AnalyticCoefficients analytic_coefficients(const NoiseSchedule& schedule, int t, int s, double h) {
  check_pair(schedule, t, s);
  const double ab_t = schedule.alpha_bar(t), ab_s = schedule.alpha_bar(s);
  AnalyticCoefficients c;
  c.lambda2 = (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s);
  c.x0_coef = std::sqrt(ab_s);
  c.eps_coef = std::sqrt(std::max(0.0, 1.0 - ab_s - c.lambda2));
  c.gamma = std::sqrt(ab_s) - c.eps_coef * std::sqrt(ab_t / (1.0 - ab_t));
  const double v = c.lambda2 + c.gamma * c.gamma * ((1.0 - ab_t) / ab_t) * (1.0 - h);
  c.variance = std::clamp(v, 0.0, 1.0 - ab_s);
  return c;
}

Tensor analytic_dpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps_hat, int t, int s,
                         double h, const Tensor& z) {
  const auto c = analytic_coefficients(schedule, t, s, h);
  require_same_shape(x_t, eps_hat, "analytic_dpm_step eps_hat");
  const double ab_t = schedule.alpha_bar(t);
  const double sa_t = std::sqrt(ab_t), ss_t = std::sqrt(1.0 - ab_t);
  const double sd = std::sqrt(c.variance);
  if (sd > 0.0) require_same_shape(x_t, z, "analytic_dpm_step noise");
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0 = (x_t[i] - ss_t * eps_hat[i]) / sa_t;
    double v = c.x0_coef * x0 + c.eps_coef * eps_hat[i];
    if (sd > 0.0) v += sd * z[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor GaussianOracleModel::predict(const Tensor& x_t, std::span<const int> t) {
  const std::int64_t n = x_t.dim(0);
  const std::int64_t d = per_sample(x_t);
  Tensor out(x_t.shape());
  for (std::int64_t b = 0; b < n; ++b) {
    const double k = std::sqrt(1.0 - schedule_->alpha_bar(step_of(t, b, n)));
    for (std::int64_t i = b * d; i < (b + 1) * d; ++i) out[i] = static_cast<float>(k * x_t[i]);
  }
  return out;
}

double HStats::at(int t) const {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] == t) return h[i];
  }
  throw std::out_of_range("no h statistic for step " + std::to_string(t));
}

Tensor standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(shape);
  for (auto& v : out.data()) v = static_cast<float>(normal(rng));
  return out;
}

HStats estimate_h(NoiseModel& model, const NoiseSchedule& schedule, const Tensor& data,
                  std::span<const int> trajectory, int n_mc, std::uint64_t seed, int batch) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (data.rank() < 1 || data.dim(0) == 0) throw std::invalid_argument("estimate_h needs a non-empty dataset");
  const std::int64_t m = data.dim(0);
  const std::int64_t d = per_sample(data);
  Shape item(data.shape().begin() + 1, data.shape().end());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, m - 1);
  HStats stats;
  for (int t : trajectory) {
    schedule.check_step(t);
    double total = 0.0;
    for (int done = 0; done < n_mc; done += batch) {
      const int k = std::min(batch, n_mc - done);
      Shape shape = item;
      shape.insert(shape.begin(), k);
      Tensor x0(shape);
      for (int b = 0; b < k; ++b) {
        const std::int64_t src = pick(rng);
        std::copy_n(data.data().begin() + src * d, d, x0.data().begin() + b * d);
      }
      Tensor eps = standard_normal(shape, rng);
      const int step[1] = {t};
      Tensor eps_hat = model.predict(q_sample(schedule, x0, step, eps), step);
      for (float v : eps_hat.data()) total += static_cast<double>(v) * v;
    }
    stats.steps.push_back(t);
    stats.h.push_back(total / (static_cast<double>(n_mc) * d));
  }
  return stats;
}

Solver parse_solver(const std::string& name) {
  if (name == "ddpm") return Solver::Ddpm;
  if (name == "ddim") return Solver::Ddim;
  if (name == "analytic") return Solver::Analytic;
  throw std::invalid_argument("unknown solver '" + name + "' (expected ddpm, ddim or analytic)");
}

std::string solver_name(Solver solver) {
  switch (solver) {
    case Solver::Ddpm: return "ddpm";
    case Solver::Ddim: return "ddim";
    case Solver::Analytic: return "analytic";
  }
  return "unknown";
}

GuidanceScope::GuidanceScope(NoiseModel& model, double rho) : model_(model), previous_(model.threshold_scale()) {
  if (!(rho > 0.0)) throw std::invalid_argument("threshold scale rho must be positive");
  model_.set_threshold_scale(previous_ * rho);
}

GuidanceScope::~GuidanceScope() { model_.set_threshold_scale(previous_); }

Tensor sample(NoiseModel& model, const NoiseSchedule& schedule, const Shape& sample_shape, int count,
              const SampleOptions& options) {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  if (options.batch < 1) throw std::invalid_argument("batch must be >= 1");
  const auto trajectory = uniform_trajectory(schedule.steps(), options.n_steps);
  if (options.solver == Solver::Analytic && !options.hstats) {
    throw std::invalid_argument("analytic solver needs h statistics");
  }
  GuidanceScope guidance(model, options.rho);

  Shape shape = sample_shape;
  shape.insert(shape.begin(), count);
  const std::int64_t d = shape_numel(sample_shape);
  Shape chunk_item = sample_shape;

  std::mt19937_64 rng(options.seed);
  Tensor x = standard_normal(shape, rng);

  auto predict_all = [&](const Tensor& xt, int t) {
    Tensor out(xt.shape());
    const int step[1] = {t};
    for (int begin = 0; begin < count; begin += options.batch) {
      const int k = std::min(options.batch, count - begin);
      Shape cs = chunk_item;
      cs.insert(cs.begin(), k);
      std::vector<float> buf(xt.data().begin() + begin * d, xt.data().begin() + (begin + k) * d);
      Tensor eps = model.predict(Tensor(cs, std::move(buf)), step);
      if (eps.shape() != cs) throw ShapeError("noise model returned " + shape_str(eps.shape()));
      std::copy(eps.data().begin(), eps.data().end(), out.data().begin() + begin * d);
    }
    return out;
  };

  for (std::size_t i = trajectory.size(); i-- > 0;) {
    const int t = trajectory[i];
    const int s = i > 0 ? trajectory[i - 1] : 0;
    Tensor eps_hat = predict_all(x, t);
    switch (options.solver) {
      case Solver::Ddim:
        x = ddim_step(schedule, x, eps_hat, t, s);
        break;
      case Solver::Ddpm: {
        Tensor z = s > 0 ? standard_normal(shape, rng) : Tensor();
        x = ddpm_step(schedule, x, eps_hat, t, s, z);
        break;
      }
      case Solver::Analytic: {
        Tensor z = s > 0 ? standard_normal(shape, rng) : Tensor();
        x = analytic_dpm_step(schedule, x, eps_hat, t, s, options.hstats->at(t), z);
        break;
      }
    }
  }
  return x;
}

}  // namespace spikediff
