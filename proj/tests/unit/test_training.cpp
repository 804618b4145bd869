#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "spikediff/checkpoint.hpp"
#include "spikediff/stbp.hpp"
#include "spikediff/training.hpp"
#include "test_support.hpp"

namespace spikediff {
namespace {

namespace fs = std::filesystem;
using test::random_tensor;

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = NoiseSchedule::linear(1000);
  return s;
}

// Two modes at (+-0.8, 0) with spread 0.05.
Tensor two_modes(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    out[i * 2] = static_cast<float>((i % 2 ? 0.8 : -0.8) + noise(rng));
    out[i * 2 + 1] = static_cast<float>(noise(rng));
  }
  return out;
}

NetConfig tiny_mlp() {
  NetConfig c;
  c.mode = ArchMode::Mlp;
  c.data_dim = 2;
  c.hidden = 32;
  c.mlp_blocks = 2;
  c.emb_dim = 16;
  c.time_steps = 4;
  return c;
}

TrainConfig quick(int stage1, int stage2 = 0) {
  TrainConfig t;
  t.stage1_iterations = stage1;
  t.stage2_iterations = stage2;
  t.batch_size = 64;
  t.seed = 3;
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(TrainConfig, Validation) {
  auto c = quick(100, 9);
  EXPECT_NO_THROW(c.validate());
  c.stage2_iterations = 10;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(0, 0);
  EXPECT_NO_THROW(c.validate());
  c.grad_clip = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick(10);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Adam, MatchesHandComputation) {
  ParameterStore store;
  store.add("w", Tensor({1}, {1.0f}));
  Adam opt(0.1);
  double w = 1.0, m = 0.0, v = 0.0;
  int step = 0;
  for (double g : {0.5, -1.0, 0.25}) {
    ++step;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, step)), vh = v / (1 - std::pow(0.999, step));
    w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    opt.step(store, {{"w", Tensor({1}, {static_cast<float>(g)})}});
    EXPECT_NEAR(store.at("w")[0], w, 1e-6);
  }
  EXPECT_EQ(opt.steps(), 3);
}

TEST(ClipGlobalNorm, Property) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const double scale = std::exp(std::uniform_real_distribution<double>(-4, 4)(rng));
    NamedGrads g{{"a", random_tensor({3, 4}, rng, -scale, scale)}, {"b", random_tensor({5}, rng, -scale, scale)}};
    const NamedGrads before = g;
    double ref = 0.0;
    for (const auto& [n, t] : g)
      for (float v : t.data()) ref += double(v) * v;
    ref = std::sqrt(ref);
    const double norm = clip_global_norm(g, 1.0);
    EXPECT_NEAR(norm, ref, 1e-6 * ref);
    double after = 0.0;
    for (const auto& [n, t] : g)
      for (float v : t.data()) after += double(v) * v;
    after = std::sqrt(after);
    if (ref > 1.0) {
      EXPECT_LE(after, 1.0 + 1e-6);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i].second, before[i].second);
    }
  }
}

TEST(DiffusionLoss, TeacherForcedIsZero) {
  std::mt19937_64 rng(2);
  auto batch = draw_diffusion_batch(schedule(), two_modes(32, 1), rng);
  Graph<float> g;
  NoisePredictor oracle = [&](Graph<float>& gr, Var<float>, std::span<const int>) { return gr.constant(batch.eps); };
  EXPECT_EQ(diffusion_loss(g, oracle, batch).value().item(), 0.0f);
}

TEST(DiffusionLoss, ZeroPredictorNearOne) {
  std::mt19937_64 rng(3);
  Tensor x0 = two_modes(20000, 2);
  Graph<float> g;
  NoisePredictor zero = [](Graph<float>& gr, Var<float> x, std::span<const int>) { return gr.constant(Tensor(x.shape())); };
  const double loss = diffusion_loss(g, zero, schedule(), x0, rng).value().item();
  // Var of a chi-square(1) mean over 40000 draws: 2 / 40000.
  EXPECT_NEAR(loss, 1.0, 4.0 * std::sqrt(2.0 / 40000));
}

TEST(DiffusionLoss, NonNegativeAndTimeRange) {
  std::mt19937_64 rng(4);
  SpikingNet net(tiny_mlp(), 1);
  for (int i = 0; i < 20; ++i) {
    auto batch = draw_diffusion_batch(schedule(), two_modes(16, i), rng);
    for (int t : batch.t) {
      EXPECT_GE(t, 1);
      EXPECT_LE(t, 1000);
    }
    Graph<float> g;
    ParamBinding p(g, net.params(), false);
    NoisePredictor f = [&](Graph<float>&, Var<float> x, std::span<const int> t) {
      return net_forward(net, p, x, t, NormMode::Eval);
    };
    EXPECT_GE(diffusion_loss(g, f, batch).value().item(), 0.0f);
  }
  EXPECT_THROW(draw_diffusion_batch(schedule(), Tensor({0, 2}), rng), std::invalid_argument);
}

TEST(Stage1, LossFallsOnTwoModes) {
  SpikingNet net(tiny_mlp(), 5);
  auto cfg = quick(200);
  const auto result = train_stage1(net, schedule(), two_modes(2000, 7), cfg);
  ASSERT_EQ(result.losses.size(), 200u);
  const double head = smoothed_head(result.losses, 20), tail = smoothed_tail(result.losses, 20);
  EXPECT_LT(tail, 0.7 * head) << head << " -> " << tail;
}

TEST(Stage1, ZeroLearningRateKeepsWeights) {
  SpikingNet net(tiny_mlp(), 5);
  const SpikingNet before = net;
  auto cfg = quick(5);
  cfg.learning_rate = 0.0;
  train_stage1(net, schedule(), two_modes(100, 1), cfg);
  for (const auto& name : net.params().trainable_names()) EXPECT_EQ(net.params().at(name), before.params().at(name)) << name;
}

TEST(Stage1, DeterministicCurveAndCheckpoint) {
  auto dir = fs::temp_directory_path() / "spikediff_test" / "stage1_det";
  fs::create_directories(dir);
  std::vector<double> curves[2];
  for (int run = 0; run < 2; ++run) {
    SpikingNet net(tiny_mlp(), 5);
    auto cfg = quick(20);
    cfg.checkpoint_every = 10;
    cfg.checkpoint_path = dir / ("run" + std::to_string(run) + ".sdmc");
    curves[run] = train_stage1(net, schedule(), two_modes(100, 1), cfg).losses;
  }
  EXPECT_EQ(curves[0], curves[1]);
  const auto a = slurp(dir / "run0.sdmc");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "run1.sdmc"));
}

TEST(Stage1, DivergenceAborts) {
  SpikingNet net(tiny_mlp(), 5);
  Tensor bad = two_modes(8, 1);
  for (auto& v : bad.data()) v = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_stage1(net, schedule(), bad, quick(3)), TrainingDiverged);
}

TEST(Stage1, RejectsTsmAndMismatchedData) {
  SpikingNet tsm = convert_to_tsm(SpikingNet(tiny_mlp(), 1));
  EXPECT_THROW(train_stage1(tsm, schedule(), two_modes(8, 1), quick(1)), std::logic_error);
  SpikingNet net(tiny_mlp(), 1);
  EXPECT_THROW(train_stage1(net, schedule(), Tensor({8, 3}), quick(1)), ShapeError);
}

TEST(Stage2, ZeroIterationsIsPlainConversion) {
  SpikingNet net(tiny_mlp(), 5);
  SpikingNet tuned = finetune_stage2(net, schedule(), two_modes(64, 1), quick(10, 0));
  SpikingNet converted = convert_to_tsm(net);
  EXPECT_TRUE(tuned.params() == converted.params());
  EXPECT_EQ(net.block_type(), BlockType::PreSpike);
}

TEST(Stage2, MovesTemporalParameters) {
  SpikingNet net(tiny_mlp(), 5);
  Tensor data = two_modes(1000, 7);
  train_stage1(net, schedule(), data, quick(100));
  TrainResult result;
  SpikingNet tuned = finetune_stage2(net, schedule(), data, quick(100, 9), &result);
  EXPECT_EQ(result.losses.size(), 9u);
  double moved = 0.0;
  for (const auto& b : tuned.blocks()) {
    for (const char* site : {".conv1.tsm_p", ".conv2.tsm_p"}) {
      for (float p : tuned.params().at(b.name + site).data()) moved = std::max(moved, std::abs(p - 1.0));
    }
  }
  EXPECT_GT(moved, 1e-4);
}

TEST(EvaluateLoss, SameStreamForEqualNetworks) {
  SpikingNet net(tiny_mlp(), 5);
  SpikingNet tsm = convert_to_tsm(net);
  Tensor data = two_modes(200, 1);
  const double a = evaluate_loss(net, schedule(), data, 11, 4, 32);
  EXPECT_EQ(a, evaluate_loss(tsm, schedule(), data, 11, 4, 32));
  EXPECT_NE(a, evaluate_loss(net, schedule(), data, 12, 4, 32));
}

TEST(Smoothing, Windows) {
  std::vector<double> c{1, 2, 3, 4, 5};
  EXPECT_EQ(smoothed_head(c, 2), 1.5);
  EXPECT_EQ(smoothed_tail(c, 2), 4.5);
  EXPECT_EQ(smoothed_tail(c, 20), 3.0);
  EXPECT_THROW(smoothed_head(std::vector<double>{}, 2), std::invalid_argument);
}

// STBP oracle ------------------------------------------------------------------

double worst_gap(const TinyGradients& a, const TinyGradients& b) {
  double w = std::abs(a.loss - b.loss);
  for (std::size_t l = 0; l < a.weight.size(); ++l) {
    w = std::max(w, max_abs_diff(a.weight[l], b.weight[l]));
    if (a.p[l]) w = std::max(w, max_abs_diff(*a.p[l], *b.p[l]));
  }
  return w;
}

TEST(Stbp, OracleMatchesAutodiff) {
  std::mt19937_64 rng(21);
  double p_mass = 0.0;
  for (int i = 0; i < 30; ++i) {
    auto inst = random_tiny_instance(rng, i % 2 == 1);
    const auto a = stbp_oracle(inst.net, inst.input, inst.target);
    const auto b = stbp_autodiff(inst.net, inst.input, inst.target);
    EXPECT_LE(worst_gap(a, b), 1e-6) << "instance " << i;
    for (const auto& p : a.p)
      if (p) p_mass += std::abs(p->data()[0]) + std::abs(p->data()[p->size() - 1]);
  }
  EXPECT_GT(p_mass, 0.0);
}

// At T=1 a single layer is ordinary backprop through the surrogate.
TEST(Stbp, SingleStepIsPlainBackprop) {
  TinySpikingNet net;
  net.time_steps = 1;
  net.layers.push_back({TensorD({3, 2}, {0.9, -0.3, 0.4, 0.8, -0.2, 0.5}), std::nullopt});
  const TensorD x({2, 3}, {1.0, 0.5, -0.2, 0.3, 1.1, 0.7});
  const TensorD y({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const auto got = stbp_oracle(net, x, y);

  TensorD expect({3, 2});
  double loss = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int j = 0; j < 2; ++j) {
      double u = 0.0;
      for (int k = 0; k < 3; ++k) u += x[n * 3 + k] * net.layers[0].weight[k * 2 + j];
      const double s = u >= 1.0 ? 1.0 : 0.0;
      const double ds = std::abs(u - 1.0) < 0.5 ? 1.0 : 0.0;
      loss += (s - y[n * 2 + j]) * (s - y[n * 2 + j]) / 4.0;
      for (int k = 0; k < 3; ++k) expect[k * 2 + j] += 2.0 * (s - y[n * 2 + j]) / 4.0 * ds * x[n * 3 + k];
    }
  EXPECT_NEAR(got.loss, loss, 1e-12);
  EXPECT_LE(max_abs_diff(got.weight[0], expect), 1e-12);
  EXPECT_LE(worst_gap(got, stbp_autodiff(net, x, y)), 1e-12);
}

TEST(Stbp, RejectsOversizedNets) {
  std::mt19937_64 rng(1);
  auto inst = random_tiny_instance(rng, false);
  auto big = inst.net;
  big.time_steps = 5;
  EXPECT_THROW(stbp_oracle(big, inst.input, inst.target), std::invalid_argument);
  big = inst.net;
  big.layers.push_back(big.layers.back());
  big.layers.push_back(big.layers.back());
  EXPECT_THROW(stbp_oracle(big, inst.input, inst.target), std::invalid_argument);
  big = inst.net;
  big.layers[0].weight = TensorD({11, 3});
  EXPECT_THROW(stbp_oracle(big, inst.input, inst.target), std::invalid_argument);
}

}  // namespace
}  // namespace spikediff
