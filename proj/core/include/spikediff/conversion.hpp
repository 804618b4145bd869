#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "spikediff/tensor.hpp"

namespace spikediff {

/// (s / (2^b - 1)) * clip(round((2^b - 1) x / s), 0, 2^b - 1), ties away from zero.
double quantize_act(double x, double s, int bits);

/// Rate of a non-leaky IF neuron with initial charge theta / 2 and reset by
/// subtraction under constant current over T steps:
/// clip(floor(T I / theta + 1/2), 0, T) / T.
double if_firing_rate(double current, double theta, int time_steps);

/// Spike count of that neuron, by direct simulation.
int if_spike_count(double current, double theta, int time_steps);

/// Dense layer with a clipped, quantized activation.
struct QuantLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  double s = 1.0;
  int bits = 1;
};

struct QuantizedAnn {
  std::vector<QuantLayer> layers;

  /// Shapes chain, s > 0, and every layer shares one bit width >= 1.
  void validate() const;
  int bits() const;
};

struct IfLayer {
  TensorD weight;  // [in, out], pre-multiplied by the previous layer's s
  TensorD bias;
  double theta = 1.0;
  double initial_charge = 0.5;
};

struct IfSnn {
  std::vector<IfLayer> layers;
  int time_steps = 1;
};

/// theta = s, T = 2^b - 1, initial charge theta / 2, next-layer weights * s.
IfSnn convert(const QuantizedAnn& ann);

/// Quantized activations of every layer for one input row.
std::vector<std::vector<double>> ann_activations(const QuantizedAnn& ann, std::span<const float> input);

/// Rate-decoded outputs (theta / T) * count of every layer for one input row.
/// The first layer sees the input as a constant current; deeper layers see the
/// previous layer's spike train.
std::vector<std::vector<double>> snn_activations(const IfSnn& snn, std::span<const float> input);

struct DivergenceReport {
  /// Mean |Q - Q~| per layer over all inputs and units.
  std::vector<double> mean_abs_gap;
  std::vector<double> max_abs_gap;
  std::int64_t inputs = 0;
};

/// `inputs` is [M, D].
DivergenceReport divergence_report(const QuantizedAnn& ann, const IfSnn& snn, const Tensor& inputs);
std::string divergence_report_json(const DivergenceReport& report);

/// Random quantized stack with the given widths (widths[0] is the input size).
QuantizedAnn random_quantized_ann(const std::vector<int>& widths, int bits, std::mt19937_64& rng);

/// ANNQ container: layer.<i>.weight, layer.<i>.bias and layer.<i>.quant = [s, b].
void save_quantized_ann(const std::filesystem::path& path, const QuantizedAnn& ann);
QuantizedAnn load_quantized_ann(const std::filesystem::path& path);

/// Converted network in the model container: layer.<i>.weight, layer.<i>.bias
/// and layer.<i>.if = [theta, initial_charge, T].
void save_if_snn(const std::filesystem::path& path, const IfSnn& snn);

}  // namespace spikediff
