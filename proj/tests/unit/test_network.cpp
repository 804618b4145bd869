#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "spikediff/checkpoint.hpp"
#include "spikediff/network.hpp"
#include "test_support.hpp"

namespace spikediff {
namespace {

namespace fs = std::filesystem;
using test::random_tensor;

NetConfig mlp_config() {
  NetConfig c;
  c.mode = ArchMode::Mlp;
  c.data_dim = 2;
  c.hidden = 8;
  c.mlp_blocks = 2;
  c.emb_dim = 8;
  c.time_steps = 4;
  return c;
}

NetConfig unet_config(std::vector<int> mults = {1, 2}) {
  NetConfig c;
  c.mode = ArchMode::Unet;
  c.in_channels = 1;
  c.image_size = 8;
  c.base_channels = 4;
  c.channel_mults = std::move(mults);
  c.blocks_per_stage = 1;
  c.emb_dim = 8;
  c.time_steps = 2;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / "spikediff_test" / (std::string(info->test_suite_name()) + "_" + info->name());
  fs::create_directories(dir);
  return dir / name;
}

struct BlockFixture {
  ParameterStore store;
  Graph<float> g;
  ParamBinding params{g, store, true};
  BlockContext ctx;
  ResidualBlock block;

  BlockFixture(int channels, int time_steps, NormMode mode) : block{"b", channels, true} {
    std::mt19937_64 rng(1);
    init_residual_block(store, block, 0, rng);
    ctx.params = &params;
    ctx.time_steps = time_steps;
    ctx.bn = BatchNormOptions{mode, 0.1, 1e-5};
  }

  void fill(const std::string& name, float v) {
    for (auto& x : store.at(name).data()) x = v;
  }
};

TEST(PreSpike, ZeroWeightsPassThrough) {
  std::mt19937_64 rng(2);
  BlockFixture f(6, 4, NormMode::Train);
  for (const char* site : {"b.conv1", "b.conv2"}) {
    f.fill(std::string(site) + ".weight", 0.0f);
    f.fill(std::string(site) + ".bn.gamma", 0.0f);
  }
  Tensor x = random_tensor({4 * 3, 6}, rng, -2, 2);
  auto out = prespike_forward(f.ctx, f.block, f.g.constant(x));
  EXPECT_EQ(out.value(), x);
}

TEST(PreSpike, InternalSpikesBinary) {
  std::mt19937_64 rng(3);
  BlockFixture f(6, 4, NormMode::Train);
  SpikeRecorder rec;
  f.ctx.recorder = &rec;
  auto out = prespike_forward(f.ctx, f.block, f.g.constant(random_tensor({4 * 5, 6}, rng, -3, 3)));
  EXPECT_EQ(rec.sites().size(), 2u);
  EXPECT_TRUE(rec.all_binary());
  EXPECT_FALSE(test::is_binary(out.value()));
}

// Scalar reference for a one-channel dense block in eval mode.
struct ScalarLif {
  double v = 0.0;
  double step(double i) {
    const double u = v + i;
    const double s = u >= 1.0 ? 1.0 : 0.0;
    v = u * (1.0 - s);
    return s;
  }
};

TEST(PreSpike, SingleChannelHandTrace) {
  BlockFixture f(1, 2, NormMode::Eval);
  const double w1 = 0.7, w2 = -0.4, gamma = 1.5, beta = 0.1, eps = 1e-5;
  f.fill("b.conv1.weight", static_cast<float>(w1));
  f.fill("b.conv2.weight", static_cast<float>(w2));
  for (const char* site : {"b.conv1", "b.conv2"}) {
    f.fill(std::string(site) + ".bn.gamma", static_cast<float>(gamma));
    f.fill(std::string(site) + ".bn.beta", static_cast<float>(beta));
  }
  const double o_in[2] = {1.2, 0.3};
  auto bn = [&](double x) { return gamma * x / std::sqrt(1.0 + eps) + beta; };
  ScalarLif l1, l2;
  double expect[2];
  for (int t = 0; t < 2; ++t) {
    const double mid = bn(w1 * l1.step(o_in[t])) + o_in[t];
    expect[t] = bn(w2 * l2.step(mid)) + mid;
  }
  auto out = prespike_forward(f.ctx, f.block, f.g.constant(Tensor({2, 1}, {1.2f, 0.3f})));
  EXPECT_NEAR(out.value()[0], expect[0], 1e-6);
  EXPECT_NEAR(out.value()[1], expect[1], 1e-6);
}

TEST(Sew, CraftedFixtureReachesTwo) {
  BlockFixture f(1, 2, NormMode::Eval);
  f.fill("b.conv1.weight", 1.0f);
  f.fill("b.conv1.bn.running_mean", 1.0f);
  f.fill("b.conv1.bn.beta", 1.0f);
  SpikeRecorder rec;
  f.ctx.recorder = &rec;
  auto out = sew_forward(f.ctx, f.block, f.g.constant(Tensor::ones({2, 1})));
  for (float v : out.first_sum.value().data()) EXPECT_EQ(v, 2.0f);
  EXPECT_TRUE(test::is_binary(out.mid_spikes.value()));
  EXPECT_TRUE(test::is_binary(out.out_spikes.value()));
  EXPECT_TRUE(rec.all_binary());
}

TEST(Sew, ZeroConvPathKeepsInput) {
  std::mt19937_64 rng(4);
  BlockFixture f(3, 2, NormMode::Train);
  for (const char* site : {"b.conv1", "b.conv2"}) {
    f.fill(std::string(site) + ".weight", 0.0f);
    f.fill(std::string(site) + ".bn.gamma", 0.0f);
  }
  Tensor s({2 * 4, 3});
  for (auto& v : s.data()) v = static_cast<float>(rng() % 2);
  auto out = sew_forward(f.ctx, f.block, f.g.constant(s));
  EXPECT_EQ(out.first_sum.value(), s);
  EXPECT_TRUE(test::is_binary(out.first_sum.value()));
}

TEST(Sew, RejectsNonBinary) {
  BlockFixture f(1, 1, NormMode::Eval);
  EXPECT_THROW(sew_forward(f.ctx, f.block, f.g.constant(Tensor({1, 1}, {0.5f}))), std::invalid_argument);
}

TEST(Tsm, OnesMatchPreSpikeBitwise) {
  std::mt19937_64 rng(5);
  BlockFixture f(5, 4, NormMode::Train);
  add_temporal_parameters(f.store, f.block, 4);
  Tensor x = random_tensor({4 * 3, 5}, rng, -2, 2);
  auto a = prespike_forward(f.ctx, f.block, f.g.constant(x));
  BlockFixture h(5, 4, NormMode::Train);
  add_temporal_parameters(h.store, h.block, 4);
  auto b = tsm_forward(h.ctx, h.block, h.g.constant(x));
  EXPECT_EQ(a.value(), b.value());
}

TEST(Tsm, ZerosSilenceCurrents) {
  std::mt19937_64 rng(6);
  BlockFixture f(5, 4, NormMode::Eval);
  add_temporal_parameters(f.store, f.block, 4);
  f.fill("b.conv1.tsm_p", 0.0f);
  f.fill("b.conv2.tsm_p", 0.0f);
  Tensor x = random_tensor({4 * 3, 5}, rng, -2, 2);
  EXPECT_EQ(tsm_forward(f.ctx, f.block, f.g.constant(x)).value(), x);
}

// dL/dp[t] = sum_i (dL/dU_i[t]) * I_i[t], where U[t] = decay * V[t-1] + p[t] I[t].
TEST(Tsm, TemporalGradientMatchesChainRule) {
  std::mt19937_64 rng(7);
  const int t_steps = 4, n = 6;
  Graph<double> g;
  auto current = g.input(random_tensor<double>({t_steps * n, 1}, rng, -1, 2).set_requires_grad(true));
  auto p = g.input(TensorD({t_steps}, {0.6, 1.3, 0.9, 1.1}).set_requires_grad(true));
  auto run = lif_run(LifParams{}, time_scale(current, p), t_steps);
  auto w = g.constant(random_tensor<double>({t_steps * n, 1}, rng, -1, 1));
  auto grads = g.backward(add(sum(mul(run.potentials, w)), sum(run.spikes)));
  const auto gi = grads.of(current), gp = grads.of(p);
  double any = 0.0;
  for (int t = 0; t < t_steps; ++t) {
    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dl_du = gi[t * n + i] / p.value()[t];
      expect += dl_du * current.value()[t * n + i];
    }
    EXPECT_NEAR(gp[t], expect, 1e-12);
    any += std::abs(gp[t]);
  }
  EXPECT_GT(any, 0.0);
}

TEST(TimeEmbedding, ZeroIndexPattern) {
  const int t = 0;
  Tensor e = sinusoidal_embedding(std::span(&t, 1), 8, 1000);
  EXPECT_EQ(e.vec(), (std::vector<float>{0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST(TimeEmbedding, DistinctIndicesDistinctVectors) {
  std::vector<int> t(1000);
  for (int i = 0; i < 1000; ++i) t[i] = i;
  const int d = 4;
  Tensor e = sinusoidal_embedding(t, d, 1000);
  std::vector<double> norm(1000);
  for (int i = 0; i < 1000; ++i) {
    for (int k = 0; k < d; ++k) norm[i] += double(e[i * d + k]) * e[i * d + k];
    norm[i] = std::sqrt(norm[i]);
  }
  double worst = -1.0;
  for (int i = 0; i < 1000; ++i)
    for (int j = i + 1; j < 1000; ++j) {
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += double(e[i * d + k]) * e[j * d + k];
      worst = std::max(worst, dot / (norm[i] * norm[j]));
    }
  EXPECT_LT(worst, 1.0);
}

TEST(TimeEmbedding, DeterministicAndRangeChecked) {
  SpikingNet net(mlp_config(), 1);
  std::vector<int> t{0, 17, 999};
  auto eval = [&] {
    Graph<float> g;
    ParamBinding p(g, net.params(), false);
    return time_embedding(net, p, t).value();
  };
  EXPECT_EQ(eval(), eval());
  std::vector<int> bad{1000};
  Graph<float> g;
  ParamBinding p(g, net.params(), false);
  EXPECT_THROW(time_embedding(net, p, bad), std::out_of_range);
  const int neg = -1;
  EXPECT_THROW(sinusoidal_embedding(std::span(&neg, 1), 8, 1000), std::out_of_range);
}

TEST(NetForward, ShapeContract) {
  std::mt19937_64 rng(8);
  {
    SpikingNet net(unet_config(), 1);
    Tensor x = random_tensor({1, 1, 8, 8}, rng);
    std::vector<int> t{10};
    EXPECT_EQ(predict(net, x, t).shape(), x.shape());
  }
  {
    SpikingNet net(mlp_config(), 1);
    Tensor x = random_tensor({16, 2}, rng);
    std::vector<int> t(16, 500);
    EXPECT_EQ(predict(net, x, t).shape(), x.shape());
    std::vector<int> short_t(3, 1);
    EXPECT_THROW(predict(net, x, short_t), ShapeError);
    std::vector<int> zero_t(16, 0);
    EXPECT_THROW(predict(net, x, zero_t), std::out_of_range);
  }
}

TEST(NetForward, DeterministicAndFinite) {
  std::mt19937_64 rng(9);
  for (auto cfg : {mlp_config(), unet_config({1, 2, 2})}) {
    SpikingNet net(cfg, 3);
    Shape shape = cfg.sample_shape();
    shape.insert(shape.begin(), 4);
    Tensor x = random_tensor(shape, rng, -3, 3);
    std::vector<int> t{1, 250, 500, 1000};
    Tensor a = predict(net, x, t);
    EXPECT_EQ(a, predict(net, x, t));
    EXPECT_TRUE(all_finite(a));
  }
}

TEST(NetConfig, Validation) {
  auto c = unet_config({1, 2, 2});
  c.image_size = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = mlp_config();
  c.time_steps = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = mlp_config();
  c.emb_dim = 5;
  EXPECT_THROW(SpikingNet(c, 0), std::invalid_argument);
}

TEST(ConvertToTsm, BitwiseOnRandomInputs) {
  std::mt19937_64 rng(10);
  for (auto cfg : {mlp_config(), unet_config()}) {
    SpikingNet net(cfg, 4);
    SpikingNet tsm = convert_to_tsm(net);
    EXPECT_EQ(tsm.block_type(), BlockType::Tsm);
    Shape shape = cfg.sample_shape();
    shape.insert(shape.begin(), 3);
    for (int i = 0; i < 10; ++i) {
      Tensor x = random_tensor(shape, rng, -1, 1);
      std::vector<int> t{1 + static_cast<int>(rng() % 1000), 1 + static_cast<int>(rng() % 1000), 1000};
      EXPECT_EQ(predict(net, x, t), predict(tsm, x, t));
    }
  }
}

TEST(ConvertToTsm, AddsOneScalarPerSiteAndStep) {
  for (auto cfg : {mlp_config(), unet_config()}) {
    SpikingNet net(cfg, 4);
    SpikingNet tsm = convert_to_tsm(net);
    const std::size_t sites = 2 * net.blocks().size();
    EXPECT_EQ(tsm.parameter_count(), net.parameter_count() + sites * cfg.time_steps);
    EXPECT_THROW(convert_to_tsm(tsm), std::logic_error);
    for (const auto& b : tsm.blocks()) EXPECT_EQ(tsm.params().at(b.name + ".conv1.tsm_p"), Tensor::ones({cfg.time_steps}));
  }
}

TEST(UNet, SkipShapesMirror) {
  SpikingNet net(unet_config({1, 2, 2, 4}), 1);
  const auto geo = net.layer_geometry();
  auto find = [&](const std::string& id) {
    for (const auto& l : geo)
      if (l.id == id) return l;
    ADD_FAILURE() << "missing layer " << id;
    return LayerGeometry{};
  };
  for (int s = 0; s < 3; ++s) {
    const auto enc = find("enc" + std::to_string(s) + ".block0.conv2");
    const auto up = find("up" + std::to_string(s) + ".conv");
    EXPECT_EQ(enc.out_channels, up.out_channels) << s;
    EXPECT_EQ(enc.out_h, up.out_h) << s;
    EXPECT_EQ(enc.out_w, up.out_w) << s;
  }
}

TEST(TimeEmbedding, ZeroProjectionRemovesTimeDependence) {
  std::mt19937_64 rng(11);
  for (auto cfg : {mlp_config(), unet_config()}) {
    SpikingNet net(cfg, 5);
    for (const auto& b : net.blocks()) {
      for (auto& v : net.params().at(b.name + ".emb.weight").data()) v = 0.0f;
      for (auto& v : net.params().at(b.name + ".emb.bias").data()) v = 0.0f;
    }
    Shape shape = cfg.sample_shape();
    shape.insert(shape.begin(), 2);
    Tensor x = random_tensor(shape, rng);
    std::vector<int> t1{1, 1}, t2{500, 1000};
    EXPECT_EQ(predict(net, x, t1), predict(net, x, t2));
  }
}

TEST(ThresholdScale, IdentityAndSilence) {
  std::mt19937_64 rng(12);
  for (int t_snn : {1, 4}) {
    auto cfg = unet_config();
    cfg.time_steps = t_snn;
    SpikingNet net(cfg, 6);
    Tensor x = random_tensor({2, 1, 8, 8}, rng);
    std::vector<int> t{3, 700};
    const Tensor base = predict(net, x, t);
    SpikingNet same = scale_thresholds(net, 1.0);
    EXPECT_EQ(predict(same, x, t), base);

    SpikeRecorder rec;
    {
      ThresholdScaleGuard guard(net, 1e6);
      predict(net, x, t, &rec);
    }
    EXPECT_EQ(rec.total_spikes(), 0.0);
    EXPECT_EQ(net.threshold_scale(), 1.0);
    EXPECT_THROW(scale_thresholds(net, 0.0), std::invalid_argument);
  }
}

TEST(Checkpoint, RoundTrip) {
  for (auto cfg : {mlp_config(), unet_config()}) {
    SpikingNet net(cfg, 7);
    auto path = scratch("net.sdmc");
    save_checkpoint(path, net);
    SpikingNet other(cfg, 99);
    EXPECT_FALSE(other.params() == net.params());
    load_checkpoint(path, other);
    EXPECT_TRUE(other.params() == net.params());
  }
}

TEST(Checkpoint, TsmNamesAndAutoConversion) {
  SpikingNet tsm = convert_to_tsm(SpikingNet(mlp_config(), 7));
  tsm.params().at("block0.conv1.tsm_p")[2] = 0.5f;
  auto path = scratch("tsm.sdmc");
  save_checkpoint(path, tsm);
  bool has = false;
  for (const auto& r : read_container_file(path, kModelMagic)) has = has || r.name == "block1.conv2.tsm_p";
  EXPECT_TRUE(has);
  SpikingNet fresh(mlp_config(), 1);
  load_checkpoint(path, fresh);
  EXPECT_EQ(fresh.block_type(), BlockType::Tsm);
  EXPECT_TRUE(fresh.params() == tsm.params());
}

TEST(Checkpoint, ByteIdenticalForSameSeed) {
  auto a = scratch("a.sdmc"), b = scratch("b.sdmc");
  save_checkpoint(a, SpikingNet(unet_config(), 42));
  save_checkpoint(b, SpikingNet(unet_config(), 42));
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, HeaderLayout) {
  std::ostringstream out;
  write_container(out, kModelMagic, {{"ab", Tensor({2}, {1.0f, -2.0f})}});
  const std::string s = out.str();
  ASSERT_EQ(s.size(), 4u + 4 + 4 + 2 + 4 + 4 + 8);
  EXPECT_EQ(s.substr(0, 4), "SDMC");
  EXPECT_EQ(s[4], 1);  // version, little-endian
  EXPECT_EQ(s[8], 2);  // name length
  EXPECT_EQ(s.substr(12, 2), "ab");
  EXPECT_EQ(s[14], 1);  // rank
  EXPECT_EQ(s[18], 2);  // dim
  float v;
  std::memcpy(&v, s.data() + 26, 4);
  EXPECT_EQ(v, -2.0f);
}

TEST(Checkpoint, Errors) {
  SpikingNet net(mlp_config(), 7);
  auto path = scratch("net.sdmc");
  save_checkpoint(path, net);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  auto write = [&](const std::string& name, const std::string& content) {
    auto p = scratch(name);
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };

  SpikingNet target(mlp_config(), 1);
  EXPECT_THROW(load_checkpoint(write("magic.sdmc", "XXXX" + bytes.substr(4)), target), CheckpointError);
  EXPECT_THROW(load_checkpoint(write("trunc.sdmc", bytes.substr(0, bytes.size() - 3)), target), CheckpointError);
  EXPECT_THROW(read_container_file(path, kQuantMagic), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch("absent.sdmc"), target), CheckpointError);

  auto wider = mlp_config();
  wider.hidden = 16;
  SpikingNet mismatch(wider, 1);
  EXPECT_THROW(load_checkpoint(path, mismatch), CheckpointError);

  auto deeper = mlp_config();
  deeper.mlp_blocks = 3;
  SpikingNet missing(deeper, 1);
  EXPECT_THROW(load_checkpoint(path, missing), CheckpointError);

  auto shallower = mlp_config();
  shallower.mlp_blocks = 1;
  SpikingNet extra(shallower, 1);
  EXPECT_THROW(load_checkpoint(path, extra), CheckpointError);
}

}  // namespace
}  // namespace spikediff
