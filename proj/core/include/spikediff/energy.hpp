#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spikediff/network.hpp"

namespace spikediff {

inline constexpr double kMacEnergyPj = 4.6;
inline constexpr double kAcEnergyPj = 0.9;

/// Multiply-accumulates of one layer for one sample and one SNN step:
/// conv Co*H'*W'*C*k^2, dense D*E.
std::int64_t count_flops(const LayerGeometry& layer);

struct LayerProfile {
  std::string id;
  LayerKind kind = LayerKind::Dense;
  std::int64_t flops = 0;
  /// Input firing rate; empty for layers fed real values.
  std::optional<double> fr;
  double sops = 0.0;
  /// True when charged as multiply-accumulates.
  bool mac = false;
  double pj = 0.0;
};

struct EnergyTotals {
  double pj = 0.0;  // one sample, one denoising step
  double mj = 0.0;
  double first_layer_pj = 0.0;
  double mac_pj = 0.0;
  double ac_pj = 0.0;
  int n_steps = 1;
  double per_sample_pj = 0.0;  // pj * n_steps
  double per_sample_mj = 0.0;
};

struct EnergyReport {
  int time_steps = 1;
  std::vector<LayerProfile> layers;
  EnergyTotals totals;
};

/// Input firing rate of every spiking layer from one instrumented forward.
std::map<std::string, double> profile_run(SpikingNet& net, const Tensor& x_t, std::span<const int> t);

/// Real-valued-input layers are charged once per step at the MAC cost;
/// spiking layers at the AC cost per synaptic operation fr * T * FLOPs.
/// `rates` must cover every spiking layer.
EnergyReport energy_report(const SpikingNet& net, const std::map<std::string, double>& rates, int n_steps = 1);

/// Lower-level form used by energy_report.
EnergyReport energy_report(std::span<const LayerGeometry> layers, int time_steps,
                           const std::map<std::string, double>& rates, int n_steps = 1);

/// {"time_steps", "layers":[{id,kind,flops,fr,sops,charge,pj}], "totals":{...}}
std::string energy_report_json(const EnergyReport& report);

}  // namespace spikediff
