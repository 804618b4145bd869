#include "spikediff/neuron.hpp"

#include <stdexcept>
#include <string>

namespace spikediff {

void LifParams::validate() const {
  if (!(decay > 0.0)) throw std::invalid_argument("LIF decay must be positive");
  if (v_reset != 0.0) throw std::invalid_argument("LIF hard reset requires v_reset == 0");
  surrogate().validate();
}

template <typename T>
LifStepResult<T> lif_step(const LifParams& params, const LifState<T>& state, Var<T> current) {
  Var<T> u = current;
  if (state.v.valid()) {
    if (state.v.shape() != current.shape()) {
      throw ShapeError("lif_step: state " + shape_str(state.v.shape()) + " vs current " +
                       shape_str(current.shape()));
    }
    u = add(scale(state.v, params.decay), current);
  }
  Var<T> s = spike(u, params.surrogate());
  Var<T> v = mul(u, add_scalar(scale(s, -1.0), 1.0));
  return {s, u, LifState<T>{v}};
}

template <typename T>
LifRunResult<T> lif_run(const LifParams& params, Var<T> currents, int time_steps) {
  params.validate();
  if (time_steps < 1) throw std::invalid_argument("lif_run: T must be >= 1");
  const auto rows = currents.shape().at(0);
  if (rows % time_steps != 0) {
    throw ShapeError("lif_run: leading axis " + std::to_string(rows) + " not divisible by T=" +
                     std::to_string(time_steps));
  }
  if (time_steps == 1) {
    auto step = lif_step<T>(params, {}, currents);
    return {step.spike, step.potential};
  }
  const auto n = rows / time_steps;
  LifState<T> state;
  std::vector<Var<T>> spikes, potentials;
  spikes.reserve(time_steps);
  potentials.reserve(time_steps);
  for (int t = 0; t < time_steps; ++t) {
    auto step = lif_step(params, state, slice_rows(currents, t * n, n));
    spikes.push_back(step.spike);
    potentials.push_back(step.potential);
    state = step.state;
  }
  return {concat_rows(spikes), concat_rows(potentials)};
}

template <typename T>
Var<T> direct_encode(Var<T> x, int time_steps) {
  if (time_steps < 1) throw std::invalid_argument("direct_encode: T must be >= 1");
  return repeat_rows(x, time_steps);
}

template <typename T>
Var<T> decode_membrane(Var<T> potentials, int time_steps, Var<T> weight, Var<T> bias) {
  Var<T> m = time_mean(potentials, time_steps);
  if (m.shape().size() == 2) return linear(m, weight, bias);
  if (m.shape().size() == 4) return add_channel_bias(conv2d(m, weight, 1, 0), bias);
  throw ShapeError("decode_membrane: unsupported potential shape " + shape_str(potentials.shape()));
}

LifParams scale_threshold(const LifParams& params, double rho) {
  if (!(rho > 0.0)) throw std::invalid_argument("threshold scale rho must be positive");
  LifParams out = params;
  out.threshold = params.threshold * rho;
  return out;
}

template LifStepResult<float> lif_step(const LifParams&, const LifState<float>&, Var<float>);
template LifStepResult<double> lif_step(const LifParams&, const LifState<double>&, Var<double>);
template LifRunResult<float> lif_run(const LifParams&, Var<float>, int);
template LifRunResult<double> lif_run(const LifParams&, Var<double>, int);
template Var<float> direct_encode(Var<float>, int);
template Var<double> direct_encode(Var<double>, int);
template Var<float> decode_membrane(Var<float>, int, Var<float>, Var<float>);
template Var<double> decode_membrane(Var<double>, int, Var<double>, Var<double>);

}  // namespace spikediff
