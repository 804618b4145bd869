#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spikediff/graph.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff {

/// Rectangular surrogate for the Heaviside spike. The backward window is
/// |u - threshold| < width / 2 with height 1 / width.
struct SurrogateSpec {
  double width = 1.0;
  double threshold = 1.0;

  void validate() const;
};

enum class NormMode { Train, Eval };

template <typename T>
struct BatchNormStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
};

struct BatchNormOptions {
  NormMode mode = NormMode::Train;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Elementwise ----------------------------------------------------------------

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double factor);
template <typename T> Var<T> add_scalar(Var<T> a, double value);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> silu(Var<T> a);

// Reductions -----------------------------------------------------------------

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
/// mean((a - b)^2) over all elements.
template <typename T> Var<T> mse(Var<T> a, Var<T> b);

// Layout ---------------------------------------------------------------------

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Rows [begin, begin + count) along axis 0.
template <typename T> Var<T> slice_rows(Var<T> a, std::int64_t begin, std::int64_t count);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Stacks `times` copies of `a` along axis 0.
template <typename T> Var<T> repeat_rows(Var<T> a, std::int64_t times);
template <typename T> Var<T> upsample_nearest2x(Var<T> a);

// Time-major helpers. Activations carrying an SNN time axis are stored as
// [T*N, ...] with row index t*N + n.

/// [T*N, ...] -> [N, ...], arithmetic mean over the T groups.
template <typename T> Var<T> time_mean(Var<T> a, std::int64_t time_steps);
/// Row group t multiplied by scales[t]; `scales` has shape [T].
template <typename T> Var<T> time_scale(Var<T> a, Var<T> scales);
/// x[T*N, C, ...] + e[N, C] broadcast over time and trailing axes.
template <typename T> Var<T> add_time_broadcast(Var<T> x, Var<T> e);
/// x[N, C, ...] + b[C].
template <typename T> Var<T> add_channel_bias(Var<T> x, Var<T> b);

// Layers ---------------------------------------------------------------------

/// input[N, D] * weight[D, E] + bias[E].
template <typename T> Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias);
template <typename T> Var<T> linear(Var<T> input, Var<T> weight);

/// Cross-correlation of input[N, C, H, W] with weight[Co, C, KH, KW].
template <typename T> Var<T> conv2d(Var<T> input, Var<T> weight, int stride, int padding);

/// Normalizes over every axis except axis 1. In train mode the batch
/// statistics are used and `stats` is updated; in eval mode `stats` is used.
template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats,
                 const BatchNormOptions& options);

/// Heaviside spike (u >= threshold fires) with rectangular surrogate backward.
template <typename T> Var<T> spike(Var<T> u, const SurrogateSpec& spec);

namespace kernels {

template <typename T>
BasicTensor<T> linear_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias);

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                              int stride, int padding);

/// Output spatial extent of a convolution along one axis.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding);

}  // namespace kernels

}  // namespace spikediff
