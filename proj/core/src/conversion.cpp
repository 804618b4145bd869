#include "spikediff/conversion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "spikediff/checkpoint.hpp"

namespace spikediff {

namespace {

int levels(int bits) {
  if (bits < 1 || bits > 30) throw std::invalid_argument("bit width must lie in [1, 30]");
  return (1 << bits) - 1;
}

/// Count-to-value map shared by the quantizer and the rate decoder so both
/// produce the same double for the same integer level.
double level_value(double s, int T, std::int64_t count) {
  if (count == T) return s;
  return s * static_cast<double>(count) / T;
}

std::vector<double> dense(std::span<const double> x, const TensorD& w, const TensorD& b) {
  const std::int64_t D = w.dim(0), E = w.dim(1);
  std::vector<double> out(b.vec());
  for (std::int64_t i = 0; i < D; ++i) {
    if (x[i] == 0.0) continue;
    for (std::int64_t j = 0; j < E; ++j) out[j] += x[i] * w[i * E + j];
  }
  return out;
}

}  // namespace

double quantize_act(double x, double s, int bits) {
  if (!(s > 0.0)) throw std::invalid_argument("clipping threshold s must be positive");
  const int T = levels(bits);
  const double q = std::clamp(std::round(T * x / s), 0.0, static_cast<double>(T));
  return level_value(s, T, static_cast<std::int64_t>(q));
}

double if_firing_rate(double current, double theta, int time_steps) {
  if (!(theta > 0.0)) throw std::invalid_argument("threshold must be positive");
  if (time_steps < 1) throw std::invalid_argument("time_steps must be >= 1");
  const double c = std::clamp(std::floor(time_steps * current / theta + 0.5), 0.0, static_cast<double>(time_steps));
  return c / time_steps;
}

int if_spike_count(double current, double theta, int time_steps) {
  if (!(theta > 0.0)) throw std::invalid_argument("threshold must be positive");
  // Charge in units of theta.
  const double step = current / theta;
  double v = 0.5;
  int count = 0;
  for (int n = 0; n < time_steps; ++n) {
    v += step;
    if (v >= 1.0) {
      v -= 1.0;
      ++count;
    }
  }
  return count;
}

void QuantizedAnn::validate() const {
  if (layers.empty()) throw std::invalid_argument("quantized network has no layers");
  const int b = layers.front().bits;
  levels(b);
  std::int64_t prev = -1;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& q = layers[l];
    if (q.bits != b) throw std::invalid_argument("layers use mixed bit widths");
    if (!(q.s > 0.0)) throw std::invalid_argument("layer " + std::to_string(l) + " has s <= 0");
    if (q.weight.rank() != 2 || q.bias.rank() != 1 || q.bias.dim(0) != q.weight.dim(1)) {
      throw ShapeError("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
    }
    if (prev >= 0 && q.weight.dim(0) != prev) throw ShapeError("layer widths do not chain");
    prev = q.weight.dim(1);
  }
}

int QuantizedAnn::bits() const {
  validate();
  return layers.front().bits;
}

IfSnn convert(const QuantizedAnn& ann) {
  IfSnn snn;
  snn.time_steps = levels(ann.bits());
  for (std::size_t l = 0; l < ann.layers.size(); ++l) {
    const auto& q = ann.layers[l];
    IfLayer layer;
    layer.weight = q.weight.cast<double>();
    if (l > 0) {
      for (auto& w : layer.weight.data()) w *= ann.layers[l - 1].s;
    }
    layer.bias = q.bias.cast<double>();
    layer.theta = q.s;
    layer.initial_charge = q.s / 2;
    snn.layers.push_back(std::move(layer));
  }
  return snn;
}

std::vector<std::vector<double>> ann_activations(const QuantizedAnn& ann, std::span<const float> input) {
  ann.validate();
  std::vector<double> x(input.begin(), input.end());
  if (static_cast<std::int64_t>(x.size()) != ann.layers.front().weight.dim(0)) {
    throw ShapeError("input width does not match the first layer");
  }
  std::vector<std::vector<double>> out;
  for (const auto& q : ann.layers) {
    auto z = dense(x, q.weight.cast<double>(), q.bias.cast<double>());
    for (auto& v : z) v = quantize_act(v, q.s, q.bits);
    out.push_back(z);
    x = std::move(z);
  }
  return out;
}

std::vector<std::vector<double>> snn_activations(const IfSnn& snn, std::span<const float> input) {
  if (snn.layers.empty()) throw std::invalid_argument("converted network has no layers");
  const int T = snn.time_steps;
  std::vector<double> x(input.begin(), input.end());
  if (static_cast<std::int64_t>(x.size()) != snn.layers.front().weight.dim(0)) {
    throw ShapeError("input width does not match the first layer");
  }
  std::vector<std::vector<double>> out;

  // Layer 1 integrates a constant current.
  const auto& first = snn.layers.front();
  const auto current = dense(x, first.weight, first.bias);
  std::vector<std::vector<double>> spikes(T, std::vector<double>(current.size()));
  std::vector<double> rate(current.size());
  for (std::size_t j = 0; j < current.size(); ++j) {
    const double step = current[j] / first.theta;
    double v = first.initial_charge / first.theta;
    std::int64_t count = 0;
    for (int n = 0; n < T; ++n) {
      v += step;
      const bool fire = v >= 1.0;
      if (fire) v -= 1.0;
      count += fire;
      spikes[n][j] = fire ? 1.0 : 0.0;
    }
    rate[j] = level_value(first.theta, T, count);
  }
  out.push_back(rate);

  for (std::size_t l = 1; l < snn.layers.size(); ++l) {
    const auto& layer = snn.layers[l];
    const std::size_t E = static_cast<std::size_t>(layer.weight.dim(1));
    std::vector<double> v(E, layer.initial_charge);
    std::vector<std::int64_t> count(E, 0);
    std::vector<std::vector<double>> next(T, std::vector<double>(E));
    for (int n = 0; n < T; ++n) {
      const auto cur = dense(spikes[n], layer.weight, layer.bias);
      for (std::size_t j = 0; j < E; ++j) {
        v[j] += cur[j];
        const bool fire = v[j] >= layer.theta;
        if (fire) v[j] -= layer.theta;
        count[j] += fire;
        next[n][j] = fire ? 1.0 : 0.0;
      }
    }
    std::vector<double> r(E);
    for (std::size_t j = 0; j < E; ++j) r[j] = level_value(layer.theta, T, count[j]);
    out.push_back(std::move(r));
    spikes = std::move(next);
  }
  return out;
}

DivergenceReport divergence_report(const QuantizedAnn& ann, const IfSnn& snn, const Tensor& inputs) {
  ann.validate();
  if (ann.layers.size() != snn.layers.size()) throw std::invalid_argument("architectures differ in depth");
  for (std::size_t l = 0; l < ann.layers.size(); ++l) {
    if (ann.layers[l].weight.shape() != snn.layers[l].weight.shape()) {
      throw std::invalid_argument("architectures differ at layer " + std::to_string(l));
    }
  }
  if (inputs.rank() != 2 || inputs.dim(1) != ann.layers.front().weight.dim(0)) {
    throw ShapeError("inputs must be [M, " + std::to_string(ann.layers.front().weight.dim(0)) + "]");
  }
  const std::size_t L = ann.layers.size();
  DivergenceReport r;
  r.inputs = inputs.dim(0);
  r.mean_abs_gap.assign(L, 0.0);
  r.max_abs_gap.assign(L, 0.0);
  std::vector<double> elements(L, 0.0);
  const std::int64_t D = inputs.dim(1);
  for (std::int64_t m = 0; m < inputs.dim(0); ++m) {
    std::span<const float> row(inputs.data().data() + m * D, static_cast<std::size_t>(D));
    const auto q = ann_activations(ann, row);
    const auto qt = snn_activations(snn, row);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < q[l].size(); ++j) {
        const double gap = std::abs(q[l][j] - qt[l][j]);
        r.mean_abs_gap[l] += gap;
        r.max_abs_gap[l] = std::max(r.max_abs_gap[l], gap);
      }
      elements[l] += static_cast<double>(q[l].size());
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (elements[l] > 0) r.mean_abs_gap[l] /= elements[l];
  }
  return r;
}

std::string divergence_report_json(const DivergenceReport& report) {
  nlohmann::ordered_json j;
  j["inputs"] = report.inputs;
  auto layers = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < report.mean_abs_gap.size(); ++l) {
    nlohmann::ordered_json e;
    e["layer"] = l;
    e["mean_abs_gap"] = report.mean_abs_gap[l];
    e["max_abs_gap"] = report.max_abs_gap[l];
    if (l > 0) e["grows_from_previous"] = report.mean_abs_gap[l] > report.mean_abs_gap[l - 1];
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j.dump(2);
}

QuantizedAnn random_quantized_ann(const std::vector<int>& widths, int bits, std::mt19937_64& rng) {
  if (widths.size() < 2) throw std::invalid_argument("need an input width and at least one layer width");
  std::uniform_real_distribution<double> unit(-1.0, 1.0), thresh(0.5, 1.5);
  QuantizedAnn ann;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l], out = widths[l + 1];
    if (in < 1 || out < 1) throw std::invalid_argument("layer widths must be >= 1");
    QuantLayer q;
    q.weight = Tensor({in, out});
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : q.weight.data()) w = static_cast<float>(scale * unit(rng));
    q.bias = Tensor({out});
    for (auto& b : q.bias.data()) b = static_cast<float>(0.1 * unit(rng));
    q.s = static_cast<float>(thresh(rng));
    q.bits = bits;
    ann.layers.push_back(std::move(q));
  }
  ann.validate();
  return ann;
}

void save_quantized_ann(const std::filesystem::path& path, const QuantizedAnn& ann) {
  ann.validate();
  std::vector<Record> records;
  for (std::size_t l = 0; l < ann.layers.size(); ++l) {
    const auto& q = ann.layers[l];
    const std::string p = "layer." + std::to_string(l);
    records.push_back({p + ".weight", q.weight});
    records.push_back({p + ".bias", q.bias});
    records.push_back({p + ".quant", Tensor({2}, {static_cast<float>(q.s), static_cast<float>(q.bits)})});
  }
  write_container_file(path, kQuantMagic, records);
}

QuantizedAnn load_quantized_ann(const std::filesystem::path& path) {
  auto records = read_container_file(path, kQuantMagic);
  if (records.size() % 3 != 0) throw CheckpointError("quantized network records are not grouped in threes");
  QuantizedAnn ann;
  for (std::size_t l = 0; l < records.size() / 3; ++l) {
    const std::string p = "layer." + std::to_string(l);
    auto& w = records[3 * l];
    auto& b = records[3 * l + 1];
    auto& m = records[3 * l + 2];
    if (w.name != p + ".weight" || b.name != p + ".bias" || m.name != p + ".quant") {
      throw CheckpointError("unexpected record order at layer " + std::to_string(l));
    }
    if (m.value.size() != 2) throw CheckpointError(p + ".quant must hold [s, b]");
    QuantLayer q;
    q.weight = std::move(w.value);
    q.bias = std::move(b.value);
    q.s = m.value[0];
    q.bits = static_cast<int>(m.value[1]);
    ann.layers.push_back(std::move(q));
  }
  ann.validate();
  return ann;
}

void save_if_snn(const std::filesystem::path& path, const IfSnn& snn) {
  std::vector<Record> records;
  for (std::size_t l = 0; l < snn.layers.size(); ++l) {
    const auto& layer = snn.layers[l];
    const std::string p = "layer." + std::to_string(l);
    records.push_back({p + ".weight", layer.weight.cast<float>()});
    records.push_back({p + ".bias", layer.bias.cast<float>()});
    records.push_back({p + ".if", Tensor({3}, {static_cast<float>(layer.theta), static_cast<float>(layer.initial_charge),
                                               static_cast<float>(snn.time_steps)})});
  }
  write_container_file(path, kModelMagic, records);
}

}  // namespace spikediff
