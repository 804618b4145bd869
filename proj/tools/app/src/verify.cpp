#include "spikediff/app/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "spikediff/conversion.hpp"
#include "spikediff/diffusion.hpp"
#include "spikediff/grad_check.hpp"
#include "spikediff/ops.hpp"
#include "spikediff/stbp.hpp"

namespace spikediff::app {

namespace {

TensorD uniform(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

/// Reduces an op output to a scalar through fixed random weights so every
/// output coordinate contributes a distinct gradient.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, y.graph()->constant(uniform(y.shape(), rng, -1.0, 1.0))));
}

struct OpCase {
  std::string name;
  std::function<std::vector<TensorD>(std::mt19937_64&)> points;
  std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)> fn;
};

std::vector<OpCase> smooth_ops() {
  using G = Graph<double>;
  using Args = std::span<const Var<double>>;
  std::vector<OpCase> ops;
  ops.push_back({"add", [](auto& r) { return std::vector{uniform({3, 4}, r), uniform({3, 4}, r)}; },
                 [](G&, Args a) { return weighted_sum(add(a[0], a[1]), 1); }});
  ops.push_back({"mul", [](auto& r) { return std::vector{uniform({3, 4}, r), uniform({3, 4}, r)}; },
                 [](G&, Args a) { return weighted_sum(mul(a[0], a[1]), 2); }});
  ops.push_back({"square", [](auto& r) { return std::vector{uniform({5}, r)}; },
                 [](G&, Args a) { return weighted_sum(square(a[0]), 3); }});
  ops.push_back({"silu", [](auto& r) { return std::vector{uniform({2, 5}, r)}; },
                 [](G&, Args a) { return weighted_sum(silu(a[0]), 4); }});
  ops.push_back({"mse", [](auto& r) { return std::vector{uniform({4, 3}, r), uniform({4, 3}, r)}; },
                 [](G&, Args a) { return mse(a[0], a[1]); }});
  ops.push_back({"linear", [](auto& r) { return std::vector{uniform({4, 3}, r), uniform({3, 5}, r), uniform({5}, r)}; },
                 [](G&, Args a) { return weighted_sum(linear(a[0], a[1], a[2]), 5); }});
  ops.push_back({"linear_chain",
                 [](auto& r) {
                   return std::vector{uniform({2, 4}, r), uniform({4, 5}, r), uniform({5, 3}, r), uniform({3, 2}, r)};
                 },
                 [](G&, Args a) { return weighted_sum(linear(linear(linear(a[0], a[1]), a[2]), a[3]), 6); }});
  ops.push_back({"conv2d", [](auto& r) { return std::vector{uniform({2, 2, 5, 5}, r), uniform({3, 2, 3, 3}, r)}; },
                 [](G&, Args a) { return weighted_sum(conv2d(a[0], a[1], 2, 1), 7); }});
  ops.push_back({"batchnorm",
                 [](auto& r) { return std::vector{uniform({4, 3, 2, 2}, r), uniform({3}, r), uniform({3}, r)}; },
                 [](G&, Args a) {
                   BatchNormStats<double> s{TensorD({3}), TensorD({3}, 1.0)};
                   return weighted_sum(batchnorm(a[0], a[1], a[2], s, BatchNormOptions{}), 8);
                 }});
  ops.push_back({"conv2d_batchnorm",
                 [](auto& r) { return std::vector{uniform({3, 2, 4, 4}, r), uniform({2, 2, 3, 3}, r), uniform({2}, r)}; },
                 [](G& g, Args a) {
                   BatchNormStats<double> s{TensorD({2}), TensorD({2}, 1.0)};
                   auto beta = g.constant(TensorD({2}));
                   return weighted_sum(batchnorm(conv2d(a[0], a[1], 1, 1), a[2], beta, s, BatchNormOptions{}), 9);
                 }});
  ops.push_back({"time_mean", [](auto& r) { return std::vector{uniform({6, 3}, r)}; },
                 [](G&, Args a) { return weighted_sum(time_mean(a[0], 3), 10); }});
  ops.push_back({"time_scale", [](auto& r) { return std::vector{uniform({8, 3}, r), uniform({4}, r)}; },
                 [](G&, Args a) { return weighted_sum(time_scale(a[0], a[1]), 11); }});
  ops.push_back({"add_time_broadcast", [](auto& r) { return std::vector{uniform({6, 3, 2}, r), uniform({2, 3}, r)}; },
                 [](G&, Args a) { return weighted_sum(add_time_broadcast(a[0], a[1]), 12); }});
  ops.push_back({"add_channel_bias", [](auto& r) { return std::vector{uniform({2, 3, 2, 2}, r), uniform({3}, r)}; },
                 [](G&, Args a) { return weighted_sum(add_channel_bias(a[0], a[1]), 13); }});
  ops.push_back({"upsample_nearest2x", [](auto& r) { return std::vector{uniform({1, 2, 3, 3}, r)}; },
                 [](G&, Args a) { return weighted_sum(upsample_nearest2x(a[0]), 14); }});
  ops.push_back({"repeat_concat_slice", [](auto& r) { return std::vector{uniform({2, 3}, r)}; },
                 [](G&, Args a) {
                   auto x = repeat_rows(a[0], 3);
                   return weighted_sum(concat_rows<double>({slice_rows(x, 1, 4), square(x)}), 15);
                 }});
  return ops;
}

bool moments_ok(const Tensor& x, double& worst_mean, double& worst_var) {
  const std::int64_t n = x.dim(0), d = x.dim(1);
  worst_mean = worst_var = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    double m = 0.0, s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) m += x[i * d + j];
    m /= n;
    for (std::int64_t i = 0; i < n; ++i) s += (x[i * d + j] - m) * (x[i * d + j] - m);
    s /= n - 1;
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_var = std::max(worst_var, std::abs(s - 1.0));
  }
  return worst_mean <= 0.05 && worst_var <= 0.1;
}

}  // namespace

SuiteResult verify_gradients(std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  std::string worst_op;
  for (const auto& op : smooth_ops()) {
    for (int i = 0; i < instances; ++i) {
      const double err = grad_check(op.fn, op.points(rng));
      if (err > worst) {
        worst = err;
        worst_op = op.name;
      }
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst << (worst_op.empty() ? "" : " (" + worst_op + ")");
  return {"gradients", worst <= 1e-3, d.str()};
}

SuiteResult verify_stbp(std::uint64_t seed, int instances) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    auto inst = random_tiny_instance(rng, i % 2 == 1);
    const auto a = stbp_oracle(inst.net, inst.input, inst.target);
    const auto b = stbp_autodiff(inst.net, inst.input, inst.target);
    worst = std::max(worst, std::abs(a.loss - b.loss));
    for (std::size_t l = 0; l < a.weight.size(); ++l) {
      worst = std::max(worst, max_abs_diff(a.weight[l], b.weight[l]));
      if (a.p[l]) worst = std::max(worst, max_abs_diff(*a.p[l], *b.p[l]));
    }
  }
  std::ostringstream d;
  d << "max abs difference " << worst << " over " << instances << " instances";
  return {"stbp", worst <= 1e-6, d.str()};
}

SuiteResult verify_samplers(std::uint64_t seed, int samples) {
  const auto schedule = NoiseSchedule::linear(1000);
  GaussianOracleModel oracle(schedule);
  std::ostringstream d;
  bool ok = true;
  auto check = [&](const std::string& label, const Tensor& x) {
    double m = 0, v = 0;
    const bool pass = moments_ok(x, m, v);
    ok = ok && pass;
    d << label << " |mean|=" << m << " |var-1|=" << v << "; ";
  };

  SampleOptions opt;
  opt.seed = seed;
  opt.batch = samples;
  opt.solver = Solver::Ddpm;
  opt.n_steps = 1000;
  check("ddpm-1000", sample(oracle, schedule, {2}, samples, opt));

  opt.solver = Solver::Ddim;
  opt.n_steps = 50;
  check("ddim-50", sample(oracle, schedule, {2}, samples, opt));

  std::mt19937_64 data_rng(seed + 1);
  Tensor data = standard_normal({samples, 2}, data_rng);
  const auto trajectory = uniform_trajectory(1000, 50);
  const auto h = estimate_h(oracle, schedule, data, trajectory, samples, seed + 2, samples);
  opt.solver = Solver::Analytic;
  opt.hstats = &h;
  check("analytic-50", sample(oracle, schedule, {2}, samples, opt));

  // With h = 1 the optimal variance collapses to the posterior variance.
  double gap = 0.0;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    const auto c = analytic_coefficients(schedule, trajectory[i], trajectory[i - 1], 1.0);
    gap = std::max(gap, std::abs(c.variance - c.lambda2));
  }
  ok = ok && gap <= 1e-10;
  d << "h=1 variance gap " << gap;
  return {"samplers", ok, d.str()};
}

SuiteResult verify_conversion(std::uint64_t seed, int inputs) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.5, 1.5);
  double worst = 0.0;
  for (int b = 1; b <= 4; ++b) {
    auto ann = random_quantized_ann({6, 8, 5}, b, rng);
    auto snn = convert(ann);
    Tensor x({inputs, 6});
    for (auto& v : x.data()) v = static_cast<float>(unit(rng));
    const auto report = divergence_report(ann, snn, x);
    worst = std::max(worst, report.max_abs_gap.front());
  }
  std::ostringstream d;
  d << "max first-layer gap " << worst;
  return {"conversion", worst == 0.0, d.str()};
}

std::vector<SuiteResult> run_verify(std::uint64_t seed, std::ostream& log) {
  std::vector<SuiteResult> out;
  auto run = [&](SuiteResult r) {
    log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n' << std::flush;
    out.push_back(std::move(r));
  };
  run(verify_gradients(seed, 5));
  run(verify_stbp(seed, 30));
  run(verify_samplers(seed, 10000));
  run(verify_conversion(seed, 1000));
  return out;
}

}  // namespace spikediff::app
