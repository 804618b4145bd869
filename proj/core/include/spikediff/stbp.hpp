#pragma once

#include <optional>
#include <random>
#include <vector>

#include "spikediff/neuron.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff {

/// Dense spiking layer: current[t] = p[t] * (input[t] . weight), weight [in, out].
struct TinyLayer {
  TensorD weight;
  std::optional<TensorD> p;  // [T] when temporal
};

/// Small fully connected LIF network driven by direct-encoded input x [N, D].
/// The loss is the mean squared error between the last layer's time-averaged
/// spike rate and `target` [N, out].
struct TinySpikingNet {
  std::vector<TinyLayer> layers;
  LifParams lif;
  int time_steps = 1;

  /// Size limits of the hand-written oracle: at most 2 layers of at most 10
  /// neurons and 4 time steps.
  void validate() const;
};

struct TinyGradients {
  double loss = 0.0;
  std::vector<TensorD> weight;
  std::vector<std::optional<TensorD>> p;
};

/// Gradients from an explicit backward-in-time recursion over the unrolled
/// LIF dynamics, independent of the autodiff graph.
TinyGradients stbp_oracle(const TinySpikingNet& net, const TensorD& input, const TensorD& target);

/// The same quantities computed through Graph<double>.
TinyGradients stbp_autodiff(const TinySpikingNet& net, const TensorD& input, const TensorD& target);

/// Random instance within the oracle limits. Weights are scaled so that a
/// useful fraction of neurons fire.
struct TinyInstance {
  TinySpikingNet net;
  TensorD input;
  TensorD target;
};
TinyInstance random_tiny_instance(std::mt19937_64& rng, bool temporal);

}  // namespace spikediff
