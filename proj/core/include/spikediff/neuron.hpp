#pragma once

#include "spikediff/graph.hpp"
#include "spikediff/ops.hpp"

namespace spikediff {

/// Constants of the leaky integrate-and-fire neuron with hard reset.
///
/// `decay` is the multiplicative factor applied to the previous post-reset
/// potential. It is stored directly rather than as a time constant.
struct LifParams {
  double decay = 1.0;
  double threshold = 1.0;
  double v_reset = 0.0;
  double surrogate_width = 1.0;

  void validate() const;
  SurrogateSpec surrogate() const { return {surrogate_width, threshold}; }
};

/// Post-reset membrane potential V[n]. An empty state means V = 0.
template <typename T>
struct LifState {
  Var<T> v;
};

template <typename T>
struct LifStepResult {
  Var<T> spike;      // S[n], exactly 0 or 1
  Var<T> potential;  // U[n], before reset
  LifState<T> state;
};

template <typename T>
struct LifRunResult {
  Var<T> spikes;      // [T*N, ...]
  Var<T> potentials;  // [T*N, ...], pre-reset
};

/// U = decay * V + I; S = H(U - threshold); V' = U * (1 - S).
template <typename T>
LifStepResult<T> lif_step(const LifParams& params, const LifState<T>& state, Var<T> current);

/// Iterates lif_step from a zero state over time-major currents [T*N, ...].
template <typename T>
LifRunResult<T> lif_run(const LifParams& params, Var<T> currents, int time_steps);

/// Replicates x[N, ...] as the input current of every time step: [T*N, ...].
template <typename T>
Var<T> direct_encode(Var<T> x, int time_steps);

/// Time-mean of pre-reset potentials followed by a learned projection. Rank-2
/// potentials use a dense projection weight[D, E]; rank-4 potentials use a
/// 1x1 convolution weight[Co, C, 1, 1]. `bias` is per output channel.
template <typename T>
Var<T> decode_membrane(Var<T> potentials, int time_steps, Var<T> weight, Var<T> bias);

/// Threshold multiplied by rho > 0. Used for inference-time guidance.
LifParams scale_threshold(const LifParams& params, double rho);

}  // namespace spikediff
