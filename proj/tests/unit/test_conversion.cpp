#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "spikediff/checkpoint.hpp"
#include "spikediff/conversion.hpp"
#include "test_support.hpp"

namespace spikediff {
namespace {

// Independent quantizer: nearest level on the grid s/(2^b-1), halves rounded up.
double grid_quantize(double x, double s, int bits) {
  const double levels = std::pow(2.0, bits) - 1.0;
  double k = std::floor(x * levels / s + 0.5);
  k = std::min(std::max(k, 0.0), levels);
  return k * s / levels;
}

TEST(QuantizeAct, Examples) {
  EXPECT_EQ(quantize_act(0.0, 1.0, 3), 0.0);
  EXPECT_EQ(quantize_act(1.7, 1.5, 2), 1.5);
  EXPECT_EQ(quantize_act(1.5, 1.5, 2), 1.5);
  EXPECT_DOUBLE_EQ(quantize_act(0.5, 1.0, 2), 2.0 / 3.0);
  EXPECT_EQ(quantize_act(0.49, 1.0, 1), 0.0);
  EXPECT_EQ(quantize_act(0.51, 1.0, 1), 1.0);
  EXPECT_EQ(quantize_act(-3.0, 1.0, 4), 0.0);
}

TEST(QuantizeAct, Errors) {
  EXPECT_THROW(quantize_act(0.3, 0.0, 2), std::invalid_argument);
  EXPECT_THROW(quantize_act(0.3, -1.0, 2), std::invalid_argument);
  EXPECT_THROW(quantize_act(0.3, 1.0, 0), std::invalid_argument);
}

TEST(QuantizeAct, MatchesGridOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(-1.0, 3.0), s(0.1, 2.5);
  for (int bits = 1; bits <= 6; ++bits) {
    for (int i = 0; i < 500; ++i) {
      const double xv = x(rng), sv = s(rng);
      EXPECT_NEAR(quantize_act(xv, sv, bits), grid_quantize(xv, sv, bits), 1e-12);
    }
  }
}

TEST(QuantizeActProperty, IdempotentAndInRange) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> x(-2.0, 4.0), s(0.1, 3.0);
  for (int bits = 1; bits <= 8; ++bits) {
    const double levels = (1 << bits) - 1;
    for (int i = 0; i < 300; ++i) {
      const double sv = s(rng);
      const double q = quantize_act(x(rng), sv, bits);
      EXPECT_GE(q, 0.0);
      EXPECT_LE(q, sv);
      const double k = q * levels / sv;
      EXPECT_NEAR(k, std::round(k), 1e-9);
      EXPECT_EQ(quantize_act(q, sv, bits), q);
    }
  }
}

TEST(IfFiringRate, Examples) {
  EXPECT_DOUBLE_EQ(if_firing_rate(0.5, 1.0, 3), 2.0 / 3.0);
  EXPECT_EQ(if_firing_rate(0.0, 1.0, 5), 0.0);
  EXPECT_EQ(if_firing_rate(-0.7, 1.0, 5), 0.0);
  EXPECT_EQ(if_firing_rate(1.0, 1.0, 7), 1.0);
  EXPECT_EQ(if_firing_rate(9.0, 1.0, 7), 1.0);
  EXPECT_THROW(if_firing_rate(0.5, 0.0, 3), std::invalid_argument);
  EXPECT_THROW(if_firing_rate(0.5, 1.0, 0), std::invalid_argument);
}

TEST(IfSpikeCount, SimulationMatchesClosedForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> cur(-0.5, 1.5), th(0.25, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const int t = 1 + static_cast<int>(rng() % 16);
    const double c = cur(rng), theta = th(rng);
    EXPECT_DOUBLE_EQ(if_spike_count(c, theta, t) / static_cast<double>(t), if_firing_rate(c, theta, t))
        << "c=" << c << " theta=" << theta << " T=" << t;
  }
}

TEST(Conversion, SingleLayerExactForSmallBitWidths) {
  for (int bits = 1; bits <= 4; ++bits) {
    std::mt19937_64 rng(10 + bits);
    const auto ann = random_quantized_ann({6, 5}, bits, rng);
    const auto snn = convert(ann);
    ASSERT_EQ(snn.time_steps, (1 << bits) - 1);
    Tensor inputs = test::random_tensor({1000, 6}, rng, -2, 2);
    const auto& q = ann.layers[0];
    for (std::int64_t m = 0; m < 1000; ++m) {
      std::span<const float> row(inputs.data().data() + m * 6, 6);
      const auto rates = snn_activations(snn, row)[0];
      for (int j = 0; j < 5; ++j) {
        double z = q.bias[j];
        for (int i = 0; i < 6; ++i) z += static_cast<double>(row[i]) * q.weight[i * 5 + j];
        ASSERT_NEAR(rates[j], grid_quantize(z, q.s, bits), 1e-12) << "bits=" << bits << " m=" << m << " j=" << j;
      }
    }
  }
}

TEST(Conversion, OneBitUsesOneStep) {
  std::mt19937_64 rng(4);
  EXPECT_EQ(convert(random_quantized_ann({3, 3}, 1, rng)).time_steps, 1);
}

TEST(Conversion, ParametersFollowTheRules) {
  std::mt19937_64 rng(5);
  const auto ann = random_quantized_ann({4, 3, 2}, 3, rng);
  const auto snn = convert(ann);
  ASSERT_EQ(snn.layers.size(), 2u);
  EXPECT_EQ(snn.time_steps, 7);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(snn.layers[l].theta, ann.layers[l].s);
    EXPECT_EQ(snn.layers[l].initial_charge, ann.layers[l].s / 2);
  }
  EXPECT_EQ(snn.layers[0].weight, ann.layers[0].weight.cast<double>());
  for (std::size_t i = 0; i < snn.layers[1].weight.size(); ++i) {
    EXPECT_DOUBLE_EQ(snn.layers[1].weight[i], double(ann.layers[1].weight[i]) * ann.layers[0].s);
  }
}

TEST(Divergence, FirstLayerExactDeeperLayersMeasured) {
  std::mt19937_64 rng(6);
  const auto ann = random_quantized_ann({8, 8, 8}, 3, rng);
  const auto snn = convert(ann);
  Tensor inputs = test::random_tensor({500, 8}, rng, -2, 2);
  const auto r = divergence_report(ann, snn, inputs);
  ASSERT_EQ(r.mean_abs_gap.size(), 2u);
  EXPECT_EQ(r.inputs, 500);
  EXPECT_EQ(r.mean_abs_gap[0], 0.0);
  EXPECT_EQ(r.max_abs_gap[0], 0.0);
  EXPECT_GE(r.mean_abs_gap[1], 0.0);
  const auto j = nlohmann::json::parse(divergence_report_json(r));
  EXPECT_EQ(j["layers"].size(), 2u);
  EXPECT_TRUE(j["layers"][1].contains("grows_from_previous"));
}

TEST(Divergence, ShapeErrors) {
  std::mt19937_64 rng(7);
  const auto ann = random_quantized_ann({4, 3}, 2, rng);
  const auto snn = convert(ann);
  EXPECT_THROW(divergence_report(ann, snn, Tensor({5, 3})), ShapeError);
  const auto other = convert(random_quantized_ann({4, 3, 2}, 2, rng));
  EXPECT_THROW(divergence_report(ann, other, Tensor({5, 4})), std::invalid_argument);
}

TEST(QuantizedAnn, Validation) {
  std::mt19937_64 rng(8);
  auto ann = random_quantized_ann({4, 3, 2}, 2, rng);
  EXPECT_NO_THROW(ann.validate());
  auto mixed = ann;
  mixed.layers[1].bits = 3;
  EXPECT_THROW(mixed.validate(), std::invalid_argument);
  auto bad_s = ann;
  bad_s.layers[0].s = 0.0;
  EXPECT_THROW(bad_s.validate(), std::invalid_argument);
  auto broken = ann;
  broken.layers[1].weight = Tensor({5, 2});
  EXPECT_THROW(broken.validate(), ShapeError);
  EXPECT_THROW(QuantizedAnn{}.validate(), std::invalid_argument);
}

TEST(QuantizedAnn, FileRoundTrip) {
  std::mt19937_64 rng(9);
  const auto ann = random_quantized_ann({5, 4, 3}, 4, rng);
  const auto path = test::scratch_path("q.annq");
  save_quantized_ann(path, ann);
  const auto back = load_quantized_ann(path);
  ASSERT_EQ(back.layers.size(), ann.layers.size());
  for (std::size_t l = 0; l < ann.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].weight, ann.layers[l].weight);
    EXPECT_EQ(back.layers[l].bias, ann.layers[l].bias);
    EXPECT_EQ(back.layers[l].s, ann.layers[l].s);
    EXPECT_EQ(back.layers[l].bits, 4);
  }
}

TEST(QuantizedAnn, RejectsForeignFile) {
  const auto path = test::scratch_path("junk.annq");
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a network";
  }
  EXPECT_THROW(load_quantized_ann(path), CheckpointError);
}

}  // namespace
}  // namespace spikediff
