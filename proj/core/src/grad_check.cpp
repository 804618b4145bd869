#include "spikediff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace spikediff {

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<TensorD>& points) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(points.size());
  for (const auto& p : points) vars.push_back(g.constant(p));
  return f(g, vars).value().item();
}

}  // namespace

double grad_check(const MultiScalarFn& f, const std::vector<TensorD>& points, double eps) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(points.size());
  for (auto p : points) vars.push_back(g.input(std::move(p.set_requires_grad(true))));
  const auto grads = g.backward(f(g, vars));

  double worst = 0.0;
  std::vector<TensorD> probe = points;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const TensorD analytic = grads.of(vars[k]);
    for (std::size_t i = 0; i < points[k].size(); ++i) {
      const double x = points[k][i];
      probe[k][i] = x + eps;
      const double up = evaluate(f, probe);
      probe[k][i] = x - eps;
      const double down = evaluate(f, probe);
      probe[k][i] = x;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const ScalarFn& f, const TensorD& point, double eps) {
  return grad_check(
      [&f](Graph<double>& g, std::span<const Var<double>> v) { return f(g, v[0]); },
      std::vector<TensorD>{point}, eps);
}

}  // namespace spikediff
