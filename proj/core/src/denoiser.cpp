#include "spikediff/denoiser.hpp"

#include <vector>

namespace spikediff {

Tensor SpikingDenoiser::predict(const Tensor& x_t, std::span<const int> t) {
  if (t.size() == 1 && x_t.dim(0) != 1) {
    std::vector<int> steps(static_cast<std::size_t>(x_t.dim(0)), t[0]);
    return spikediff::predict(net_, x_t, steps, recorder_);
  }
  return spikediff::predict(net_, x_t, t, recorder_);
}

}  // namespace spikediff
