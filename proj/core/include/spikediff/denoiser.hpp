#pragma once

#include "spikediff/diffusion.hpp"
#include "spikediff/network.hpp"

namespace spikediff {

/// Exposes a SpikingNet to the samplers. Threshold scaling is forwarded to
/// the network.
class SpikingDenoiser final : public NoiseModel {
 public:
  explicit SpikingDenoiser(SpikingNet& net, SpikeRecorder* recorder = nullptr) : net_(net), recorder_(recorder) {}

  Tensor predict(const Tensor& x_t, std::span<const int> t) override;
  double threshold_scale() const override { return net_.threshold_scale(); }
  void set_threshold_scale(double rho) override { net_.set_threshold_scale(rho); }

 private:
  SpikingNet& net_;
  SpikeRecorder* recorder_;
};

}  // namespace spikediff
