#include "spikediff/energy.hpp"

#include <stdexcept>

#include "json.hpp"

namespace spikediff {

std::int64_t count_flops(const LayerGeometry& layer) {
  if (layer.in_channels < 1 || layer.out_channels < 1) {
    throw std::invalid_argument("layer " + layer.id + " has unresolved channel counts");
  }
  if (layer.kind == LayerKind::Dense) return layer.in_channels * layer.out_channels;
  if (layer.kernel < 1 || layer.out_h < 1 || layer.out_w < 1) {
    throw std::invalid_argument("layer " + layer.id + " has unresolved spatial shape");
  }
  return layer.out_channels * layer.out_h * layer.out_w * layer.in_channels * layer.kernel * layer.kernel;
}

std::map<std::string, double> profile_run(SpikingNet& net, const Tensor& x_t, std::span<const int> t) {
  SpikeRecorder recorder;
  predict(net, x_t, t, &recorder);
  std::map<std::string, double> rates;
  for (const auto& [site, s] : recorder.sites()) rates[site] = s.rate();
  return rates;
}

EnergyReport energy_report(std::span<const LayerGeometry> layers, int time_steps,
                           const std::map<std::string, double>& rates, int n_steps) {
  if (time_steps < 1) throw std::invalid_argument("time_steps must be >= 1");
  if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
  EnergyReport r;
  r.time_steps = time_steps;
  bool first = true;
  for (const auto& geo : layers) {
    LayerProfile p;
    p.id = geo.id;
    p.kind = geo.kind;
    p.flops = count_flops(geo);
    if (geo.spike_input) {
      auto it = rates.find(geo.id);
      if (it == rates.end()) throw std::invalid_argument("no firing rate recorded for layer " + geo.id);
      if (!(it->second >= 0.0 && it->second <= 1.0)) {
        throw std::invalid_argument("firing rate of " + geo.id + " outside [0, 1]");
      }
      p.fr = it->second;
      p.sops = it->second * time_steps * static_cast<double>(p.flops);
      p.pj = kAcEnergyPj * p.sops;
      r.totals.ac_pj += p.pj;
    } else {
      p.mac = true;
      p.pj = kMacEnergyPj * static_cast<double>(p.flops);
      r.totals.mac_pj += p.pj;
      if (first) r.totals.first_layer_pj = p.pj;
    }
    first = false;
    r.layers.push_back(std::move(p));
  }
  r.totals.pj = r.totals.mac_pj + r.totals.ac_pj;
  r.totals.mj = r.totals.pj * 1e-9;
  r.totals.n_steps = n_steps;
  r.totals.per_sample_pj = r.totals.pj * n_steps;
  r.totals.per_sample_mj = r.totals.per_sample_pj * 1e-9;
  return r;
}

EnergyReport energy_report(const SpikingNet& net, const std::map<std::string, double>& rates, int n_steps) {
  const auto layers = net.layer_geometry();
  return energy_report(layers, net.config().time_steps, rates, n_steps);
}

std::string energy_report_json(const EnergyReport& report) {
  nlohmann::ordered_json j;
  j["time_steps"] = report.time_steps;
  j["e_mac_pj"] = kMacEnergyPj;
  j["e_ac_pj"] = kAcEnergyPj;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& p : report.layers) {
    nlohmann::ordered_json l;
    l["id"] = p.id;
    l["kind"] = p.kind == LayerKind::Conv ? "conv" : "dense";
    l["flops"] = p.flops;
    l["fr"] = p.fr ? nlohmann::ordered_json(*p.fr) : nlohmann::ordered_json(nullptr);
    l["sops"] = p.sops;
    l["charge"] = p.mac ? "mac" : "ac";
    l["pj"] = p.pj;
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  const auto& t = report.totals;
  j["totals"] = {{"pj", t.pj},
                 {"mj", t.mj},
                 {"first_layer_pj", t.first_layer_pj},
                 {"mac_pj", t.mac_pj},
                 {"ac_pj", t.ac_pj},
                 {"n_steps", t.n_steps},
                 {"per_sample_pj", t.per_sample_pj},
                 {"per_sample_mj", t.per_sample_mj}};
  return j.dump(2);
}

}  // namespace spikediff
