#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "spikediff/app/commands.hpp"
#include "spikediff/app/config.hpp"
#include "spikediff/app/dataset.hpp"
#include "spikediff/app/image_io.hpp"
#include "spikediff/energy.hpp"
#include "test_support.hpp"

namespace spikediff::app {
namespace {

namespace fs = std::filesystem;
using test::scratch_path;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the installed-layout binary with a clean seed environment.
RunResult run_cli(const std::string& args, const std::string& env = "") {
  const fs::path out = scratch_path("stdout.txt"), err = scratch_path("stderr.txt");
  const std::string cmd = "env -u SPIKEDIFF_SEED " + env + " '" + std::string(SPIKEDIFF_BIN) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const std::regex kErrorLine(R"(^spikediff-error code=(\d) kind=(\w+) command=([\w-]+) message="[^\n]*"\n$)");

// Config ---------------------------------------------------------------------

TEST(ConfigText, ParsesCommentsAndBlanks) {
  const auto v = parse_config_text("# header\n\nseed = 4  # trailing\n  train.lr=0.5\n", "x");
  EXPECT_EQ(v.size(), 2u);
  EXPECT_EQ(v.at("seed"), "4");
  EXPECT_EQ(v.at("train.lr"), "0.5");
}

TEST(ConfigText, Errors) {
  EXPECT_THROW(parse_config_text("seed 4\n", "x"), ValidationError);
  EXPECT_THROW(parse_config_text("= 4\n", "x"), ValidationError);
  EXPECT_THROW(parse_config_text("seed = 1\nseed = 2\n", "x"), ValidationError);
}

TEST(RunConfig, UnknownKeyAndBadValues) {
  EXPECT_THROW(RunConfig::resolve({{"model.widht", "3"}}, {}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"snn.time_steps=four"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"sample.solver=euler"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"novalue"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {}, "-3"), ValidationError);
  EXPECT_THROW(RunConfig::resolve({{"preset", "huge"}}, {}, nullptr), ValidationError);
}

TEST(RunConfig, Precedence) {
  EXPECT_EQ(RunConfig::resolve({}, {}, nullptr).seed(), 0u);
  EXPECT_EQ(RunConfig::resolve({}, {}, "11").seed(), 11u);
  EXPECT_EQ(RunConfig::resolve({{"seed", "12"}}, {}, "11").seed(), 12u);
  EXPECT_EQ(RunConfig::resolve({{"seed", "12"}}, {"seed=13"}, "11").seed(), 13u);

  EXPECT_EQ(RunConfig::defaults("tiny").integer("train.batch_size"), 256);
  EXPECT_EQ(RunConfig::defaults("mnist").integer("train.batch_size"), 32);
  EXPECT_EQ(RunConfig::defaults("full").integer("model.base_channels"), 128);
  EXPECT_EQ(RunConfig::resolve({{"preset", "mnist"}, {"train.batch_size", "8"}}, {}, nullptr).integer("train.batch_size"),
            8);
  const auto c = RunConfig::resolve({{"preset", "tiny"}}, {"preset=mnist"}, nullptr);
  EXPECT_EQ(c.str("model.mode"), "unet");
}

TEST(RunConfig, CrossKeyValidation) {
  EXPECT_THROW(RunConfig::resolve({}, {"snn.time_steps=0"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"diffusion.steps=20", "sample.steps=21"}, nullptr), ValidationError);
  EXPECT_NO_THROW(RunConfig::resolve({}, {"diffusion.steps=20", "sample.steps=20"}, nullptr));
  EXPECT_THROW(RunConfig::resolve({}, {"sample.rho=0"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"sample.rho=-1"}, nullptr), ValidationError);
  EXPECT_THROW(RunConfig::resolve({}, {"train.stage1_iterations=100", "train.stage2_iterations=10"}, nullptr),
               ValidationError);
}

TEST(RunConfig, BuildersReflectValues) {
  const auto c = RunConfig::resolve({}, {"snn.time_steps=2", "model.hidden=16", "sample.rho=0.9"}, nullptr);
  EXPECT_EQ(c.net_config().time_steps, 2);
  EXPECT_EQ(c.net_config().hidden, 16);
  EXPECT_EQ(c.sample_options().rho, 0.9);
  EXPECT_EQ(c.schedule().steps(), 1000);
}

// Datasets -------------------------------------------------------------------

IdxImages small_images() {
  IdxImages im;
  im.count = 2;
  im.rows = 3;
  im.cols = 2;
  im.pixels = {0, 255, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  return im;
}

TEST(Idx, RoundTrip) {
  const auto im = small_images();
  const auto bytes = encode_idx_images(im);
  ASSERT_EQ(bytes.size(), 16u + 12u);
  EXPECT_EQ(bytes[3], 0x03);
  const auto back = parse_idx_images(bytes);
  EXPECT_EQ(back.count, 2u);
  EXPECT_EQ(back.rows, 3u);
  EXPECT_EQ(back.cols, 2u);
  EXPECT_EQ(back.pixels, im.pixels);
  const std::vector<std::uint8_t> labels{3, 1};
  EXPECT_EQ(parse_idx_labels(encode_idx_labels(labels)), labels);
}

TEST(Idx, RejectsBadMagicAndTruncation) {
  auto bytes = encode_idx_images(small_images());
  auto wrong = bytes;
  wrong[3] = 0x01;
  EXPECT_THROW(parse_idx_images(wrong), DatasetError);
  bytes.pop_back();
  EXPECT_THROW(parse_idx_images(bytes), DatasetError);
  EXPECT_THROW(parse_idx_images(std::vector<std::uint8_t>(7, 0)), DatasetError);
  EXPECT_THROW(parse_idx_labels(encode_idx_images(small_images())), DatasetError);
}

TEST(Idx, NormalizationEndpoints) {
  const Tensor t = normalize_images(small_images(), false);
  EXPECT_EQ(t.shape(), (Shape{2, 1, 3, 2}));
  EXPECT_EQ(t[0], -1.0f);
  EXPECT_EQ(t[1], 1.0f);
  for (float v : t.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Idx, Pad32CentersImage) {
  IdxImages im;
  im.count = 1;
  im.rows = im.cols = 28;
  im.pixels.assign(28 * 28, 255);
  const Tensor t = normalize_images(im, true);
  ASSERT_EQ(t.shape(), (Shape{1, 1, 32, 32}));
  EXPECT_EQ(t[0], -1.0f);
  EXPECT_EQ(t[1 * 32 + 1], -1.0f);
  EXPECT_EQ(t[2 * 32 + 2], 1.0f);
  EXPECT_EQ(t[29 * 32 + 29], 1.0f);
  EXPECT_EQ(t[30 * 32 + 30], -1.0f);
}

TEST(Idx, LoadsFromFilesAndChecksLabels) {
  const auto img = scratch_path("img.idx"), lab = scratch_path("lab.idx"), bad = scratch_path("bad.idx");
  write_file(img, encode_idx_images(small_images()));
  const std::vector<std::uint8_t> two{1, 2}, three{1, 2, 3};
  write_file(lab, encode_idx_labels(two));
  write_file(bad, encode_idx_labels(three));
  EXPECT_EQ(load_mnist_idx(img, lab, false).dim(0), 2);
  EXPECT_THROW(load_mnist_idx(img, bad, false), DatasetError);
}

TEST(Gmm2d, SingleModeTinySpread) {
  const auto c = gmm2d_centers(1)[0];
  const Tensor x = gen_gmm2d(1, 1e-4, 500, 1);
  for (int i = 0; i < 500; ++i) {
    EXPECT_NEAR(x[2 * i], c[0], 1e-3);
    EXPECT_NEAR(x[2 * i + 1], c[1], 1e-3);
  }
}

TEST(Gmm2d, CentersOnCircle) {
  for (int m = 1; m <= 5; ++m) {
    for (const auto& c : gmm2d_centers(m)) EXPECT_NEAR(std::hypot(c[0], c[1]), 0.8, 1e-12);
  }
}

TEST(Gmm2d, MeanNearCentroid) {
  for (int modes : {2, 3}) {
    const auto centers = gmm2d_centers(modes);
    double cx = 0, cy = 0;
    for (const auto& c : centers) cx += c[0] / modes, cy += c[1] / modes;
    const int n = 100000;
    const Tensor x = gen_gmm2d(modes, 0.05, n, 4);
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) mx += x[2 * i] / n, my += x[2 * i + 1] / n;
    EXPECT_NEAR(mx, cx, 0.02);
    EXPECT_NEAR(my, cy, 0.02);
  }
}

TEST(Gmm2d, DeterministicAndClamped) {
  EXPECT_EQ(gen_gmm2d(3, 0.5, 1000, 9), gen_gmm2d(3, 0.5, 1000, 9));
  EXPECT_NE(gen_gmm2d(3, 0.5, 1000, 9), gen_gmm2d(3, 0.5, 1000, 10));
  for (float v : gen_gmm2d(2, 2.0, 2000, 3).data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(RawTensor, RoundTrip) {
  std::mt19937_64 rng(2);
  const Tensor t = test::random_tensor({7, 3}, rng);
  const auto p = scratch_path("data.sdmc");
  save_raw_tensor(p, t);
  EXPECT_EQ(load_raw_tensor(p), t);
}

// Image output ---------------------------------------------------------------

TEST(Pixels, Mapping) {
  EXPECT_EQ(to_pixel(-1.0f), 0);
  EXPECT_EQ(to_pixel(1.0f), 255);
  EXPECT_EQ(to_pixel(0.0f), 128);
  EXPECT_EQ(to_pixel(-7.0f), 0);
  EXPECT_EQ(to_pixel(3.0f), 255);
}

TEST(Pgm, TileAndRoundTrip) {
  Tensor images({3, 1, 2, 2}, {-1, -1, -1, -1, 1, 1, 1, 1, 0, 0, 0, 0});
  const auto grid = tile_images(images, 2);
  ASSERT_EQ(grid.width, 4);
  ASSERT_EQ(grid.height, 4);
  EXPECT_EQ(grid.pixels[0], 0);
  EXPECT_EQ(grid.pixels[2], 255);
  EXPECT_EQ(grid.pixels[2 * 4 + 0], 128);
  EXPECT_EQ(grid.pixels[2 * 4 + 2], 0);
  const auto p = scratch_path("g.pgm");
  write_pgm(p, grid);
  EXPECT_EQ(slurp(p).substr(0, 2), "P5");
  const auto back = read_pgm(p);
  EXPECT_EQ(back.width, 4);
  EXPECT_EQ(back.pixels, grid.pixels);
}

TEST(Csv, Headers) {
  const auto loss = scratch_path("loss.csv"), pts = scratch_path("pts.csv");
  const std::vector<double> l{0.5, 0.25};
  write_loss_csv(loss, l);
  EXPECT_EQ(slurp(loss).substr(0, 10), "iter,loss\n");
  write_points_csv(pts, Tensor({1, 2}, {0.5f, -1.0f}));
  EXPECT_EQ(slurp(pts).substr(0, 6), "x0,x1\n");
}

// Binary ---------------------------------------------------------------------

fs::path tiny_config(const std::string& extra = "") {
  const auto p = scratch_path("run.cfg");
  write(p, "preset = tiny\nout_dir = " + scratch_path("out").string() +
               "\nmodel.hidden = 16\nmodel.emb_dim = 8\nsample.count = 8\nsample.steps = 5\n" + extra);
  return p;
}

TEST(Binary, SampleIsReproducible) {
  const auto cfg = tiny_config();
  const auto out = scratch_path("out");
  ASSERT_EQ(run_cli("sample --config '" + cfg.string() + "' --set seed=7 --set sample.rho=1").exit_code, 0);
  const std::string first = slurp(out / "samples.sdmc");
  ASSERT_EQ(run_cli("sample --config '" + cfg.string() + "' --set seed=7 --set sample.rho=1").exit_code, 0);
  EXPECT_EQ(slurp(out / "samples.sdmc"), first);
  EXPECT_FALSE(first.empty());
  const auto m = nlohmann::json::parse(slurp(out / "sample_manifest.json"));
  EXPECT_EQ(m["config"]["seed"], "7");
}

TEST(Binary, EnvironmentSeedIsDefault) {
  const auto cfg = tiny_config();
  const auto out = scratch_path("out");
  ASSERT_EQ(run_cli("sample --config '" + cfg.string() + "'", "SPIKEDIFF_SEED=5").exit_code, 0);
  const std::string env = slurp(out / "samples.sdmc");
  ASSERT_EQ(run_cli("sample --config '" + cfg.string() + "' --set seed=5").exit_code, 0);
  EXPECT_EQ(slurp(out / "samples.sdmc"), env);
}

TEST(Binary, VerifyPasses) {
  const auto r = run_cli("verify --config '" + tiny_config().string() + "'");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("gradients"), std::string::npos);
}

TEST(Binary, EnergyMatchesPerLayerArithmetic) {
  const auto cfg = tiny_config("energy.n_steps = 10\n");
  ASSERT_EQ(run_cli("energy --config '" + cfg.string() + "'").exit_code, 0);
  const auto j = nlohmann::json::parse(slurp(scratch_path("out") / "energy.json"));
  const int T = j["time_steps"];
  EXPECT_EQ(T, 4);
  // MLP 2 -> 16 with two dense residual blocks, emb width 8.
  const std::map<std::string, std::int64_t> flops{
      {"input", 2 * 16},         {"temb.fc1", 8 * 8},       {"temb.fc2", 8 * 8},
      {"block0.emb", 8 * 16},    {"block0.conv1", 16 * 16}, {"block0.conv2", 16 * 16},
      {"block1.emb", 8 * 16},    {"block1.conv1", 16 * 16}, {"block1.conv2", 16 * 16},
      {"head", 16 * 2}};
  double total = 0.0;
  ASSERT_EQ(j["layers"].size(), flops.size());
  for (const auto& l : j["layers"]) {
    const std::string id = l["id"];
    ASSERT_TRUE(flops.count(id)) << id;
    EXPECT_EQ(l["flops"].get<std::int64_t>(), flops.at(id)) << id;
    double pj;
    if (l["charge"] == "ac") {
      const double fr = l["fr"];
      EXPECT_DOUBLE_EQ(l["sops"].get<double>(), fr * T * flops.at(id)) << id;
      pj = 0.9 * fr * T * flops.at(id);
    } else {
      EXPECT_TRUE(l["fr"].is_null()) << id;
      pj = 4.6 * flops.at(id);
    }
    EXPECT_NEAR(l["pj"].get<double>(), pj, 1e-9 * std::max(1.0, pj)) << id;
    total += pj;
  }
  EXPECT_NEAR(j["totals"]["pj"].get<double>(), total, 1e-9 * total);
  EXPECT_NEAR(j["totals"]["per_sample_pj"].get<double>(), 10 * total, 1e-8 * total);
  EXPECT_DOUBLE_EQ(j["totals"]["first_layer_pj"].get<double>(), 4.6 * 32);
}

TEST(Binary, ConvertWritesReport) {
  const auto cfg = tiny_config("convert.inputs = 50\n");
  ASSERT_EQ(run_cli("convert --config '" + cfg.string() + "'").exit_code, 0);
  const auto j = nlohmann::json::parse(slurp(scratch_path("out") / "divergence.json"));
  EXPECT_EQ(j["layers"][0]["mean_abs_gap"].get<double>(), 0.0);
}

TEST(Binary, ValidationFailureExitsOne) {
  const auto r = run_cli("sample --config '" + tiny_config().string() + "' --set sample.rho=0");
  EXPECT_EQ(r.exit_code, 1);
  std::smatch m;
  ASSERT_TRUE(std::regex_match(r.err, m, kErrorLine)) << r.err;
  EXPECT_EQ(m[1], "1");
  EXPECT_EQ(m[2], "validation");
  EXPECT_EQ(m[3], "sample");
}

TEST(Binary, UnknownKeyAndMissingConfigExitOne) {
  EXPECT_EQ(run_cli("train --config '" + tiny_config("bogus.key = 1\n").string() + "'").exit_code, 1);
  EXPECT_EQ(run_cli("train --config /nonexistent/run.cfg").exit_code, 1);
  const auto r = run_cli("train");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_TRUE(std::regex_match(r.err, kErrorLine)) << r.err;
}

TEST(Binary, MissingCheckpointExitsTwo) {
  const auto r = run_cli("sample --config '" + tiny_config("checkpoint = /nonexistent/model.sdmc\n").string() + "'");
  EXPECT_EQ(r.exit_code, 2);
  std::smatch m;
  ASSERT_TRUE(std::regex_match(r.err, m, kErrorLine)) << r.err;
  EXPECT_EQ(m[2], "runtime");
}

TEST(Commands, UnknownNameRejected) {
  EXPECT_THROW(run_command("fly", RunConfig::defaults(), std::cout), ValidationError);
}

}  // namespace
}  // namespace spikediff::app
