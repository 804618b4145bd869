#include "spikediff/stbp.hpp"

#include <stdexcept>

#include "spikediff/ops.hpp"

namespace spikediff {

void TinySpikingNet::validate() const {
  lif.validate();
  if (layers.empty() || layers.size() > 2) throw std::invalid_argument("oracle supports 1 or 2 layers");
  if (time_steps < 1 || time_steps > 4) throw std::invalid_argument("oracle supports 1 to 4 time steps");
  std::int64_t prev = -1;
  for (const auto& l : layers) {
    if (l.weight.rank() != 2) throw ShapeError("layer weight must be [in, out]");
    if (l.weight.dim(0) > 10 || l.weight.dim(1) > 10) throw std::invalid_argument("oracle supports <= 10 neurons");
    if (prev >= 0 && l.weight.dim(0) != prev) throw ShapeError("layer widths do not chain");
    if (l.p && (l.p->rank() != 1 || l.p->dim(0) != time_steps)) throw ShapeError("p must have shape [T]");
    prev = l.weight.dim(1);
  }
}

TinyGradients stbp_oracle(const TinySpikingNet& net, const TensorD& input, const TensorD& target) {
  net.validate();
  const int T = net.time_steps;
  const std::size_t L = net.layers.size();
  const std::int64_t N = input.dim(0);
  const double decay = net.lif.decay, theta = net.lif.threshold, a = net.lif.surrogate_width;
  auto surrogate = [&](double u) { return std::abs(u - theta) < a / 2 ? 1.0 / a : 0.0; };

  // Forward, keeping per-layer inputs, raw currents, potentials and spikes.
  // Index layout: [layer][t][n * width + j].
  using Seq = std::vector<std::vector<double>>;
  std::vector<Seq> in(L), raw(L), u(L), o(L);
  std::vector<std::int64_t> width(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& W = net.layers[l].weight;
    const std::int64_t D = W.dim(0), E = W.dim(1);
    width[l] = E;
    in[l].resize(T);
    raw[l].assign(T, std::vector<double>(N * E, 0.0));
    u[l].assign(T, std::vector<double>(N * E, 0.0));
    o[l].assign(T, std::vector<double>(N * E, 0.0));
    std::vector<double> v(N * E, 0.0);
    for (int t = 0; t < T; ++t) {
      in[l][t] = l == 0 ? input.vec() : o[l - 1][t];
      const double p = net.layers[l].p ? (*net.layers[l].p)[t] : 1.0;
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t j = 0; j < E; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < D; ++i) acc += in[l][t][n * D + i] * W[i * E + j];
          const std::int64_t k = n * E + j;
          raw[l][t][k] = acc;
          u[l][t][k] = decay * v[k] + p * acc;
          o[l][t][k] = u[l][t][k] >= theta ? 1.0 : 0.0;
          v[k] = u[l][t][k] * (1.0 - o[l][t][k]);
        }
      }
    }
  }

  const std::int64_t E_out = width[L - 1];
  const double count = static_cast<double>(N * E_out);
  TinyGradients g;
  std::vector<double> dl_drate(N * E_out);
  for (std::int64_t k = 0; k < N * E_out; ++k) {
    double rate = 0.0;
    for (int t = 0; t < T; ++t) rate += o[L - 1][t][k];
    rate /= T;
    const double diff = rate - target[k];
    g.loss += diff * diff / count;
    dl_drate[k] = 2.0 * diff / count;
  }

  g.weight.resize(L);
  g.p.resize(L);
  // Downstream gradient w.r.t. each layer's output spikes, per time step.
  Seq dl_do(T, std::vector<double>(N * E_out));
  for (int t = 0; t < T; ++t) {
    for (std::int64_t k = 0; k < N * E_out; ++k) dl_do[t][k] = dl_drate[k] / T;
  }

  for (std::size_t l = L; l-- > 0;) {
    const auto& W = net.layers[l].weight;
    const std::int64_t D = W.dim(0), E = W.dim(1);
    TensorD dW({D, E});
    std::optional<TensorD> dp;
    if (net.layers[l].p) dp = TensorD({T});
    Seq dl_din(T, std::vector<double>(N * D, 0.0));
    std::vector<double> du_next(N * E, 0.0);  // dL/du[t+1]

    for (int t = T; t-- > 0;) {
      const double p = net.layers[l].p ? (*net.layers[l].p)[t] : 1.0;
      std::vector<double> du(N * E);
      for (std::int64_t k = 0; k < N * E; ++k) {
        // u[t+1] = decay * u[t] * (1 - o[t]) + I[t+1]
        const double dlo = dl_do[t][k] + (t + 1 < T ? du_next[k] * (-decay * u[l][t][k]) : 0.0);
        const double carry = t + 1 < T ? du_next[k] * decay * (1.0 - o[l][t][k]) : 0.0;
        du[k] = dlo * surrogate(u[l][t][k]) + carry;
      }
      double dpt = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t j = 0; j < E; ++j) {
          const double d = du[n * E + j];
          dpt += d * raw[l][t][n * E + j];
          for (std::int64_t i = 0; i < D; ++i) {
            dW[i * E + j] += d * p * in[l][t][n * D + i];
            dl_din[t][n * D + i] += d * p * W[i * E + j];
          }
        }
      }
      if (dp) (*dp)[t] = dpt;
      du_next = std::move(du);
    }
    g.weight[l] = std::move(dW);
    g.p[l] = std::move(dp);
    dl_do = std::move(dl_din);
  }
  return g;
}

TinyGradients stbp_autodiff(const TinySpikingNet& net, const TensorD& input, const TensorD& target) {
  net.validate();
  Graph<double> g;
  const int T = net.time_steps;
  std::vector<Var<double>> w, p;
  std::vector<bool> has_p;
  Var<double> x = direct_encode(g.constant(input), T);
  for (const auto& layer : net.layers) {
    TensorD wt = layer.weight;
    w.push_back(g.input(std::move(wt.set_requires_grad(true))));
    Var<double> current = linear(x, w.back());
    has_p.push_back(layer.p.has_value());
    if (layer.p) {
      TensorD pt = *layer.p;
      p.push_back(g.input(std::move(pt.set_requires_grad(true))));
      current = time_scale(current, p.back());
    } else {
      p.push_back(Var<double>());
    }
    x = lif_run(net.lif, current, T).spikes;
  }
  Var<double> loss = mse(time_mean(x, T), g.constant(target));
  auto grads = g.backward(loss);

  TinyGradients out;
  out.loss = loss.value().item();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    out.weight.push_back(grads.of(w[l]));
    out.p.push_back(has_p[l] ? std::optional<TensorD>(grads.of(p[l])) : std::nullopt);
  }
  return out;
}

TinyInstance random_tiny_instance(std::mt19937_64& rng, bool temporal) {
  std::uniform_int_distribution<int> layers(1, 2), width(2, 10), steps(1, 4), batch(1, 3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), pos(0.0, 1.0), pscale(0.5, 1.5);
  TinyInstance inst;
  auto& net = inst.net;
  net.time_steps = steps(rng);
  net.lif.decay = 0.5 + 0.5 * pos(rng);
  net.lif.threshold = 0.5 + pos(rng);
  net.lif.surrogate_width = 0.5 + pos(rng);
  const int n_layers = layers(rng);
  const int N = batch(rng);
  int in = width(rng);
  inst.input = TensorD({N, in});
  for (auto& v : inst.input.data()) v = 1.5 * unit(rng);
  for (int l = 0; l < n_layers; ++l) {
    const int out = width(rng);
    TinyLayer layer;
    layer.weight = TensorD({in, out});
    const double scale = 2.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : layer.weight.data()) v = scale * unit(rng);
    if (temporal) {
      layer.p = TensorD({net.time_steps});
      for (auto& v : layer.p->data()) v = pscale(rng);
    }
    net.layers.push_back(std::move(layer));
    in = out;
  }
  inst.target = TensorD({N, in});
  for (auto& v : inst.target.data()) v = pos(rng);
  return inst;
}

}  // namespace spikediff
