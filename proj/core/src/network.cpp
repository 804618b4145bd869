#include "spikediff/network.hpp"

#include <cmath>
#include <stdexcept>

namespace spikediff {

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

void add_dense(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng,
               bool with_bias = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
  if (with_bias) store.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

void add_conv(ParameterStore& store, const std::string& name, int in, int out, int k, std::mt19937_64& rng,
              bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  store.add(name + ".weight", uniform_tensor({out, in, k, k}, bound, rng));
  if (with_bias) store.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

void add_batchnorm(ParameterStore& store, const std::string& site, int channels) {
  store.add(site + ".bn.gamma", Tensor::ones({channels}));
  store.add(site + ".bn.beta", Tensor::zeros({channels}));
  store.add(site + ".bn.running_mean", Tensor::zeros({channels}), false);
  store.add(site + ".bn.running_var", Tensor::ones({channels}), false);
}

// Synaptic site: weights applied to a spike train, batch norm, and for TSM
// blocks the per-step temporal scale.
Var<float> synapse(BlockContext& ctx, const std::string& site, Var<float> spikes, bool dense, int stride,
                   bool temporal) {
  auto& p = *ctx.params;
  if (ctx.recorder) ctx.recorder->record(site, spikes.value());
  Var<float> current = dense ? linear(spikes, p(site + ".weight"))
                             : conv2d(spikes, p(site + ".weight"), stride, 1);
  auto& store = p.store();
  BatchNormStats<float> stats{store.at(site + ".bn.running_mean"), store.at(site + ".bn.running_var")};
  current = batchnorm(current, p(site + ".bn.gamma"), p(site + ".bn.beta"), stats, ctx.bn);
  if (ctx.bn.mode == NormMode::Train) {
    store.at(site + ".bn.running_mean") = std::move(stats.mean);
    store.at(site + ".bn.running_var") = std::move(stats.var);
  }
  if (temporal) current = time_scale(current, p(site + ".tsm_p"));
  return current;
}

Var<float> residual_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> input,
                            std::optional<Var<float>> emb, bool temporal) {
  if (input.shape().size() < 2 || input.shape()[1] != block.channels) {
    throw ShapeError("block " + block.name + ": expected " + std::to_string(block.channels) +
                     " channels, got input " + shape_str(input.shape()));
  }
  auto& p = *ctx.params;
  Var<float> s1 = lif_run(ctx.lif, input, ctx.time_steps).spikes;
  Var<float> mid = add(synapse(ctx, block.name + ".conv1", s1, block.dense, 1, temporal), input);
  if (emb) {
    Var<float> e = linear(*emb, p(block.name + ".emb.weight"), p(block.name + ".emb.bias"));
    mid = add_time_broadcast(mid, e);
  }
  Var<float> s2 = lif_run(ctx.lif, mid, ctx.time_steps).spikes;
  return add(synapse(ctx, block.name + ".conv2", s2, block.dense, 1, temporal), mid);
}

BlockContext make_context(SpikingNet& net, ParamBinding& params, NormMode norm, SpikeRecorder* recorder) {
  const auto& cfg = net.config();
  BlockContext ctx;
  ctx.params = &params;
  ctx.lif = net.effective_lif();
  ctx.time_steps = cfg.time_steps;
  ctx.bn = BatchNormOptions{norm, cfg.bn_momentum, cfg.bn_eps};
  ctx.recorder = recorder;
  ctx.type = net.block_type();
  return ctx;
}

Var<float> run_block(BlockContext& ctx, const ResidualBlock& block, Var<float> o, std::optional<Var<float>> emb) {
  return ctx.type == BlockType::Tsm ? tsm_forward(ctx, block, o, emb) : prespike_forward(ctx, block, o, emb);
}

}  // namespace

void NetConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string(what) + " must be >= 1");
  };
  positive(time_steps, "time_steps");
  positive(diffusion_steps, "diffusion_steps");
  if (emb_dim < 0 || emb_dim % 2 != 0) throw std::invalid_argument("emb_dim must be even and >= 0");
  lif.validate();
  if (mode == ArchMode::Mlp) {
    positive(data_dim, "data_dim");
    positive(hidden, "hidden");
    if (mlp_blocks < 0) throw std::invalid_argument("mlp_blocks must be >= 0");
  } else {
    positive(in_channels, "in_channels");
    positive(base_channels, "base_channels");
    if (channel_mults.empty()) throw std::invalid_argument("channel_mults must not be empty");
    for (int m : channel_mults) positive(m, "channel multiplier");
    if (blocks_per_stage < 0) throw std::invalid_argument("blocks_per_stage must be >= 0");
    const int factor = 1 << (channel_mults.size() - 1);
    if (image_size < 1 || image_size % factor != 0) {
      throw std::invalid_argument("image_size must be divisible by " + std::to_string(factor));
    }
  }
}

Shape NetConfig::sample_shape() const {
  if (mode == ArchMode::Mlp) return {data_dim};
  return {in_channels, image_size, image_size};
}

void init_residual_block(ParameterStore& store, const ResidualBlock& block, int emb_dim, std::mt19937_64& rng) {
  for (const char* site : {".conv1", ".conv2"}) {
    const std::string name = block.name + site;
    if (block.dense) {
      add_dense(store, name, block.channels, block.channels, rng, false);
    } else {
      add_conv(store, name, block.channels, block.channels, 3, rng, false);
    }
    add_batchnorm(store, name, block.channels);
    if (std::string(site) == ".conv1" && emb_dim > 0) {
      add_dense(store, block.name + ".emb", emb_dim, block.channels, rng);
    }
  }
}

void add_temporal_parameters(ParameterStore& store, const ResidualBlock& block, int time_steps) {
  store.add(block.name + ".conv1.tsm_p", Tensor::ones({time_steps}));
  store.add(block.name + ".conv2.tsm_p", Tensor::ones({time_steps}));
}

SpikingNet::SpikingNet(NetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  if (config_.mode == ArchMode::Mlp) {
    build_mlp(rng);
  } else {
    build_unet(rng);
  }
}

void SpikingNet::build_mlp(std::mt19937_64& rng) {
  const auto& c = config_;
  add_dense(params_, "input", c.data_dim, c.hidden, rng);
  if (c.emb_dim > 0) {
    add_dense(params_, "temb.fc1", c.emb_dim, c.emb_dim, rng);
    add_dense(params_, "temb.fc2", c.emb_dim, c.emb_dim, rng);
  }
  for (int b = 0; b < c.mlp_blocks; ++b) {
    ResidualBlock block{"block" + std::to_string(b), c.hidden, true};
    init_residual_block(params_, block, c.emb_dim, rng);
    blocks_.push_back(block);
  }
  add_dense(params_, "head", c.hidden, c.data_dim, rng);
}

void SpikingNet::build_unet(std::mt19937_64& rng) {
  const auto& c = config_;
  const int stages = static_cast<int>(c.channel_mults.size());
  auto ch = [&](int s) { return c.base_channels * c.channel_mults[s]; };

  add_conv(params_, "input", c.in_channels, ch(0), 3, rng, true);
  if (c.emb_dim > 0) {
    add_dense(params_, "temb.fc1", c.emb_dim, c.emb_dim, rng);
    add_dense(params_, "temb.fc2", c.emb_dim, c.emb_dim, rng);
  }
  for (int s = 0; s < stages; ++s) {
    for (int b = 0; b < c.blocks_per_stage; ++b) {
      ResidualBlock block{"enc" + std::to_string(s) + ".block" + std::to_string(b), ch(s), false};
      init_residual_block(params_, block, c.emb_dim, rng);
      blocks_.push_back(block);
    }
    if (s + 1 < stages) {
      const std::string site = "down" + std::to_string(s) + ".conv";
      add_conv(params_, site, ch(s), ch(s + 1), 3, rng, false);
      add_batchnorm(params_, site, ch(s + 1));
    }
  }
  for (int s = stages - 2; s >= 0; --s) {
    const std::string site = "up" + std::to_string(s) + ".conv";
    add_conv(params_, site, ch(s + 1), ch(s), 3, rng, false);
    add_batchnorm(params_, site, ch(s));
    for (int b = 0; b < c.blocks_per_stage; ++b) {
      ResidualBlock block{"dec" + std::to_string(s) + ".block" + std::to_string(b), ch(s), false};
      init_residual_block(params_, block, c.emb_dim, rng);
      blocks_.push_back(block);
    }
  }
  add_conv(params_, "head", ch(0), c.in_channels, 1, rng, true);
}

std::vector<LayerGeometry> SpikingNet::layer_geometry() const {
  const auto& c = config_;
  std::vector<LayerGeometry> out;
  auto dense = [&](std::string id, int in, int o, bool spikes) {
    LayerGeometry g;
    g.id = std::move(id);
    g.kind = LayerKind::Dense;
    g.spike_input = spikes;
    g.in_channels = in;
    g.out_channels = o;
    out.push_back(g);
  };
  auto conv = [&](std::string id, int in, int o, int k, int res, bool spikes) {
    LayerGeometry g;
    g.id = std::move(id);
    g.kind = LayerKind::Conv;
    g.spike_input = spikes;
    g.in_channels = in;
    g.out_channels = o;
    g.kernel = k;
    g.out_h = res;
    g.out_w = res;
    out.push_back(g);
  };

  if (c.mode == ArchMode::Mlp) {
    dense("input", c.data_dim, c.hidden, false);
    if (c.emb_dim > 0) {
      dense("temb.fc1", c.emb_dim, c.emb_dim, false);
      dense("temb.fc2", c.emb_dim, c.emb_dim, false);
    }
    for (const auto& b : blocks_) {
      dense(b.name + ".conv1", b.channels, b.channels, true);
      if (c.emb_dim > 0) dense(b.name + ".emb", c.emb_dim, b.channels, false);
      dense(b.name + ".conv2", b.channels, b.channels, true);
    }
    dense("head", c.hidden, c.data_dim, false);
    return out;
  }

  const int stages = static_cast<int>(c.channel_mults.size());
  auto ch = [&](int s) { return c.base_channels * c.channel_mults[s]; };
  auto res = [&](int s) { return c.image_size >> s; };
  conv("input", c.in_channels, ch(0), 3, res(0), false);
  if (c.emb_dim > 0) {
    dense("temb.fc1", c.emb_dim, c.emb_dim, false);
    dense("temb.fc2", c.emb_dim, c.emb_dim, false);
  }
  auto block_layers = [&](const std::string& prefix, int s) {
    for (int b = 0; b < c.blocks_per_stage; ++b) {
      const std::string name = prefix + std::to_string(s) + ".block" + std::to_string(b);
      conv(name + ".conv1", ch(s), ch(s), 3, res(s), true);
      if (c.emb_dim > 0) dense(name + ".emb", c.emb_dim, ch(s), false);
      conv(name + ".conv2", ch(s), ch(s), 3, res(s), true);
    }
  };
  for (int s = 0; s < stages; ++s) {
    block_layers("enc", s);
    if (s + 1 < stages) conv("down" + std::to_string(s) + ".conv", ch(s), ch(s + 1), 3, res(s + 1), true);
  }
  for (int s = stages - 2; s >= 0; --s) {
    conv("up" + std::to_string(s) + ".conv", ch(s + 1), ch(s), 3, res(s), true);
    block_layers("dec", s);
  }
  conv("head", ch(0), c.in_channels, 1, res(0), false);
  return out;
}

void SpikingNet::set_threshold_scale(double rho) {
  if (!(rho > 0.0)) throw std::invalid_argument("threshold scale rho must be positive");
  threshold_scale_ = rho;
}

LifParams SpikingNet::effective_lif() const { return scale_threshold(config_.lif, threshold_scale_); }

Var<float> prespike_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> input,
                            std::optional<Var<float>> emb) {
  return residual_forward(ctx, block, input, emb, false);
}

Var<float> tsm_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> input,
                       std::optional<Var<float>> emb) {
  return residual_forward(ctx, block, input, emb, true);
}

SewOutput sew_forward(BlockContext& ctx, const ResidualBlock& block, Var<float> spikes_in) {
  for (float v : spikes_in.value().data()) {
    if (v != 0.0f && v != 1.0f) throw std::invalid_argument("sew_forward: input is not a binary spike tensor");
  }
  SewOutput out;
  out.first_sum = add(synapse(ctx, block.name + ".conv1", spikes_in, block.dense, 1, false), spikes_in);
  out.mid_spikes = lif_run(ctx.lif, out.first_sum, ctx.time_steps).spikes;
  out.second_sum = add(synapse(ctx, block.name + ".conv2", out.mid_spikes, block.dense, 1, false), out.mid_spikes);
  out.out_spikes = lif_run(ctx.lif, out.second_sum, ctx.time_steps).spikes;
  return out;
}

Tensor sinusoidal_embedding(std::span<const int> t, int dim, int t_limit) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even and >= 2");
  const int half = dim / 2;
  Tensor out({static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t n = 0; n < t.size(); ++n) {
    if (t[n] < 0 || t[n] >= t_limit) {
      throw std::out_of_range("time index " + std::to_string(t[n]) + " outside [0, " + std::to_string(t_limit) + ")");
    }
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out[n * dim + i] = static_cast<float>(std::sin(t[n] * freq));
      out[n * dim + half + i] = static_cast<float>(std::cos(t[n] * freq));
    }
  }
  return out;
}

Var<float> time_embedding(const SpikingNet& net, ParamBinding& params, std::span<const int> t) {
  const auto& c = net.config();
  auto& g = params.graph();
  Var<float> e = g.constant(sinusoidal_embedding(t, c.emb_dim, c.diffusion_steps));
  e = linear(e, params("temb.fc1.weight"), params("temb.fc1.bias"));
  e = silu(e);
  return linear(e, params("temb.fc2.weight"), params("temb.fc2.bias"));
}

Var<float> net_forward(SpikingNet& net, ParamBinding& params, Var<float> x_t, std::span<const int> t,
                       NormMode norm, SpikeRecorder* recorder) {
  const auto& c = net.config();
  Shape expect = c.sample_shape();
  expect.insert(expect.begin(), static_cast<std::int64_t>(t.size()));
  if (x_t.shape() != expect) {
    throw ShapeError("net_forward: expected input " + shape_str(expect) + ", got " + shape_str(x_t.shape()));
  }
  BlockContext ctx = make_context(net, params, norm, recorder);

  std::optional<Var<float>> emb;
  if (c.emb_dim > 0) {
    std::vector<int> idx(t.begin(), t.end());
    for (auto& v : idx) v -= 1;
    emb = silu(time_embedding(net, params, idx));
  }

  Var<float> x = direct_encode(x_t, c.time_steps);
  const auto& blocks = net.blocks();

  if (c.mode == ArchMode::Mlp) {
    Var<float> o = linear(x, params("input.weight"), params("input.bias"));
    for (const auto& b : blocks) o = run_block(ctx, b, o, emb);
    Var<float> u = lif_run(ctx.lif, o, c.time_steps).potentials;
    return decode_membrane(u, c.time_steps, params("head.weight"), params("head.bias"));
  }

  const int stages = static_cast<int>(c.channel_mults.size());
  std::size_t next_block = 0;
  Var<float> o = add_channel_bias(conv2d(x, params("input.weight"), 1, 1), params("input.bias"));
  std::vector<Var<float>> skips(stages);
  for (int s = 0; s < stages; ++s) {
    for (int b = 0; b < c.blocks_per_stage; ++b) o = run_block(ctx, blocks[next_block++], o, emb);
    if (s + 1 < stages) {
      skips[s] = o;
      Var<float> spikes = lif_run(ctx.lif, o, c.time_steps).spikes;
      o = synapse(ctx, "down" + std::to_string(s) + ".conv", spikes, false, 2, false);
    }
  }
  for (int s = stages - 2; s >= 0; --s) {
    Var<float> spikes = upsample_nearest2x(lif_run(ctx.lif, o, c.time_steps).spikes);
    o = add(synapse(ctx, "up" + std::to_string(s) + ".conv", spikes, false, 1, false), skips[s]);
    for (int b = 0; b < c.blocks_per_stage; ++b) o = run_block(ctx, blocks[next_block++], o, emb);
  }
  Var<float> u = lif_run(ctx.lif, o, c.time_steps).potentials;
  return decode_membrane(u, c.time_steps, params("head.weight"), params("head.bias"));
}

Tensor predict(SpikingNet& net, const Tensor& x_t, std::span<const int> t, SpikeRecorder* recorder) {
  Graph<float> g;
  ParamBinding params(g, net.params(), false);
  return net_forward(net, params, g.constant(x_t), t, NormMode::Eval, recorder).value();
}

SpikingNet convert_to_tsm(const SpikingNet& net) {
  if (net.block_type() == BlockType::Tsm) throw std::logic_error("network already uses TSM blocks");
  SpikingNet out = net;
  for (const auto& b : out.blocks_) add_temporal_parameters(out.params_, b, out.config_.time_steps);
  out.block_type_ = BlockType::Tsm;
  return out;
}

SpikingNet scale_thresholds(const SpikingNet& net, double rho) {
  SpikingNet out = net;
  out.set_threshold_scale(net.threshold_scale() * rho);
  return out;
}

ThresholdScaleGuard::ThresholdScaleGuard(SpikingNet& net, double rho) : net_(net), previous_(net.threshold_scale()) {
  net_.set_threshold_scale(previous_ * rho);
}

ThresholdScaleGuard::~ThresholdScaleGuard() { net_.set_threshold_scale(previous_); }

}  // namespace spikediff
