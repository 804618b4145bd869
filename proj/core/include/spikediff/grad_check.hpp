#pragma once

#include <functional>
#include <span>
#include <vector>

#include "spikediff/graph.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff {

/// Scalar-valued function of one or more tensors, built on a fresh graph.
using MultiScalarFn = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;
using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Largest relative disagreement between reverse-mode gradients and central
/// finite differences over every coordinate of every input:
/// max |analytic - numeric| / (|analytic| + 1e-8). Runs in 64-bit.
double grad_check(const MultiScalarFn& f, const std::vector<TensorD>& points, double eps = 1e-3);

double grad_check(const ScalarFn& f, const TensorD& point, double eps = 1e-3);

}  // namespace spikediff
