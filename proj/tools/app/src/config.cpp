#include "spikediff/app/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace spikediff::app {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
std::optional<T> parse_number(const std::string& s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  try {
    const double v = std::stod(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<std::vector<int>> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto v = parse_number<int>(trim(item));
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

void check_value(const KeySpec& spec, const std::string& value) {
  bool ok = true;
  switch (spec.type) {
    case ValueType::Int: ok = parse_number<std::int64_t>(value).has_value(); break;
    case ValueType::UInt: ok = parse_number<std::uint64_t>(value).has_value(); break;
    case ValueType::Real: ok = parse_real(value).has_value(); break;
    case ValueType::Bool: ok = value == "true" || value == "false"; break;
    case ValueType::String: break;
    case ValueType::IntList: ok = parse_list(value).has_value(); break;
    case ValueType::Choice:
      ok = std::find(spec.choices.begin(), spec.choices.end(), value) != spec.choices.end();
      break;
  }
  if (!ok) throw ValidationError("invalid value '" + value + "' for key '" + spec.key + "'");
}

std::vector<KeySpec> build_schema() {
  using V = ValueType;
  return {
      {"preset", V::Choice, "tiny", "default set: tiny, mnist or full", {"tiny", "mnist", "full"}},
      {"seed", V::UInt, "0", "master seed", {}},
      {"out_dir", V::String, "out", "output directory", {}},
      {"checkpoint", V::String, "", "input model checkpoint (empty: freshly initialized)", {}},

      {"model.mode", V::Choice, "mlp", "mlp or unet", {"mlp", "unet"}},
      {"model.data_dim", V::Int, "2", "vector size (mlp)", {}},
      {"model.hidden", V::Int, "128", "hidden width (mlp)", {}},
      {"model.blocks", V::Int, "2", "residual blocks (mlp)", {}},
      {"model.in_channels", V::Int, "1", "image channels (unet)", {}},
      {"model.image_size", V::Int, "32", "image side (unet)", {}},
      {"model.base_channels", V::Int, "16", "stage-0 channels (unet)", {}},
      {"model.channel_mults", V::IntList, "1,2", "per-stage multipliers (unet)", {}},
      {"model.blocks_per_stage", V::Int, "2", "residual blocks per stage (unet)", {}},
      {"model.emb_dim", V::Int, "64", "time embedding width, 0 disables", {}},

      {"snn.time_steps", V::Int, "4", "SNN simulation steps", {}},
      {"snn.decay", V::Real, "1.0", "membrane decay factor", {}},
      {"snn.threshold", V::Real, "1.0", "firing threshold", {}},
      {"snn.surrogate_width", V::Real, "1.0", "rectangular surrogate width", {}},

      {"diffusion.steps", V::Int, "1000", "diffusion steps", {}},
      {"diffusion.beta_first", V::Real, "1e-4", "first beta", {}},
      {"diffusion.beta_last", V::Real, "0.02", "last beta", {}},

      {"train.lr", V::Real, "1e-3", "learning rate", {}},
      {"train.batch_size", V::Int, "256", "batch size", {}},
      {"train.grad_clip", V::Real, "1.0", "global gradient norm limit", {}},
      {"train.stage1_iterations", V::Int, "2000", "stage-1 iterations", {}},
      {"train.stage2_iterations", V::Int, "150", "stage-2 iterations", {}},
      {"train.checkpoint_every", V::Int, "0", "periodic checkpoint interval, 0 disables", {}},
      {"train.log_every", V::Int, "100", "progress line interval, 0 disables", {}},

      {"data.source", V::Choice, "gmm2d", "gmm2d, mnist-idx or raw-tensor", {"gmm2d", "mnist-idx", "raw-tensor"}},
      {"data.modes", V::Int, "2", "mixture modes (gmm2d)", {}},
      {"data.spread", V::Real, "0.05", "mode standard deviation (gmm2d)", {}},
      {"data.count", V::Int, "4096", "generated points (gmm2d)", {}},
      {"data.images", V::String, "", "IDX image file (mnist-idx)", {}},
      {"data.labels", V::String, "", "IDX label file, optional (mnist-idx)", {}},
      {"data.pad32", V::Bool, "true", "center-pad images to 32x32 (mnist-idx)", {}},
      {"data.limit", V::Int, "0", "use at most this many samples, 0 for all", {}},
      {"data.path", V::String, "", "tensor container with a 'data' record (raw-tensor)", {}},

      {"sample.solver", V::Choice, "ddim", "ddpm, ddim or analytic", {"ddpm", "ddim", "analytic"}},
      {"sample.steps", V::Int, "50", "trajectory length", {}},
      {"sample.rho", V::Real, "1.0", "threshold scale during sampling", {}},
      {"sample.count", V::Int, "256", "samples to draw", {}},
      {"sample.batch", V::Int, "256", "model evaluation chunk", {}},
      {"sample.n_mc", V::Int, "1000", "Monte-Carlo draws per step for h (analytic)", {}},
      {"sample.grid_cols", V::Int, "16", "image grid columns", {}},

      {"energy.batch", V::Int, "16", "samples in the profiling run", {}},
      {"energy.t", V::Int, "0", "diffusion step of the profiling run, 0 for the midpoint", {}},
      {"energy.n_steps", V::Int, "0", "denoising steps per sample, 0 for sample.steps", {}},

      {"convert.ann", V::String, "", "ANNQ checkpoint (empty: random network from seed)", {}},
      {"convert.widths", V::IntList, "8,16,16,8", "layer widths of the random network", {}},
      {"convert.bits", V::Int, "3", "activation bits of the random network", {}},
      {"convert.inputs", V::Int, "1000", "random inputs for the divergence report", {}},
  };
}

}  // namespace

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = build_schema();
  return schema;
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& s : config_schema()) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

std::map<std::string, std::string> preset_values(const std::string& preset) {
  if (preset == "tiny") return {};
  if (preset == "mnist") {
    return {{"model.mode", "unet"},          {"model.in_channels", "1"},   {"model.image_size", "32"},
            {"model.base_channels", "16"},   {"model.channel_mults", "1,2"}, {"model.blocks_per_stage", "2"},
            {"model.emb_dim", "64"},         {"data.source", "mnist-idx"}, {"train.batch_size", "32"},
            {"train.stage1_iterations", "20000"}, {"train.stage2_iterations", "1500"},
            {"sample.count", "64"},          {"sample.batch", "32"},       {"sample.grid_cols", "8"},
            {"sample.n_mc", "256"}};
  }
  if (preset == "full") {
    return {{"model.mode", "unet"},           {"model.in_channels", "3"},      {"model.image_size", "32"},
            {"model.base_channels", "128"},   {"model.channel_mults", "1,2,2,4"}, {"model.blocks_per_stage", "2"},
            {"model.emb_dim", "512"},         {"data.source", "raw-tensor"},   {"train.lr", "1e-5"},
            {"train.batch_size", "128"},      {"train.stage1_iterations", "500000"},
            {"train.stage2_iterations", "40000"}, {"sample.count", "64"},    {"sample.batch", "16"},
            {"sample.grid_cols", "8"},        {"sample.n_mc", "256"},          {"energy.batch", "4"}};
  }
  throw ValidationError("unknown preset '" + preset + "'");
}

std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (out.count(key)) throw ValidationError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    out[key] = value;
    if (end == text.size()) break;
  }
  return out;
}

RunConfig RunConfig::defaults(const std::string& preset) { return resolve({{"preset", preset}}, {}, nullptr); }

RunConfig RunConfig::resolve(const std::map<std::string, std::string>& file_values,
                             const std::vector<std::string>& overrides, const char* env_seed) {
  std::vector<std::pair<std::string, std::string>> sets;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + o + "'");
    sets.emplace_back(trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
  }

  std::string preset = "tiny";
  if (auto it = file_values.find("preset"); it != file_values.end()) preset = it->second;
  for (const auto& [k, v] : sets) {
    if (k == "preset") preset = v;
  }

  RunConfig c;
  for (const auto& spec : config_schema()) c.values_[spec.key] = spec.default_value;
  c.set("preset", preset);
  for (const auto& [k, v] : preset_values(preset)) c.set(k, v);
  if (env_seed && *env_seed) {
    const KeySpec* spec = find_key("seed");
    try {
      check_value(*spec, env_seed);
    } catch (const ValidationError&) {
      throw ValidationError(std::string("SPIKEDIFF_SEED is not an unsigned integer: '") + env_seed + "'");
    }
    c.values_["seed"] = env_seed;
  }
  for (const auto& [k, v] : file_values) c.set(k, v);
  for (const auto& [k, v] : sets) c.set(k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& file, const std::vector<std::string>& overrides,
                          const char* env_seed) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return resolve(parse_config_text(ss.str(), file.string()), overrides, env_seed);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ValidationError("unknown config key '" + key + "'");
  check_value(*spec, value);
  values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::integer(const std::string& key) const { return *parse_number<std::int64_t>(str(key)); }
double RunConfig::real(const std::string& key) const { return *parse_real(str(key)); }
bool RunConfig::flag(const std::string& key) const { return str(key) == "true"; }
std::vector<int> RunConfig::int_list(const std::string& key) const { return *parse_list(str(key)); }
std::uint64_t RunConfig::seed() const { return *parse_number<std::uint64_t>(str("seed")); }

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
  };
  require(integer("snn.time_steps") >= 1, "snn.time_steps must be >= 1");
  require(integer("diffusion.steps") >= 1, "diffusion.steps must be >= 1");
  require(integer("sample.steps") >= 1, "sample.steps must be >= 1");
  require(integer("sample.steps") <= integer("diffusion.steps"), "sample.steps must not exceed diffusion.steps");
  require(real("sample.rho") > 0.0, "sample.rho must be > 0");
  require(integer("sample.count") >= 1, "sample.count must be >= 1");
  require(integer("sample.batch") >= 1, "sample.batch must be >= 1");
  require(integer("sample.n_mc") >= 1, "sample.n_mc must be >= 1");
  require(integer("sample.grid_cols") >= 1, "sample.grid_cols must be >= 1");
  require(integer("data.modes") >= 1, "data.modes must be >= 1");
  require(real("data.spread") >= 0.0, "data.spread must be >= 0");
  require(integer("data.count") >= 1, "data.count must be >= 1");
  require(integer("data.limit") >= 0, "data.limit must be >= 0");
  require(integer("energy.batch") >= 1, "energy.batch must be >= 1");
  require(integer("energy.t") >= 0 && integer("energy.t") <= integer("diffusion.steps"),
          "energy.t must lie in [0, diffusion.steps]");
  require(integer("energy.n_steps") >= 0, "energy.n_steps must be >= 0");
  require(integer("convert.bits") >= 1 && integer("convert.bits") <= 16, "convert.bits must lie in [1, 16]");
  require(integer("convert.inputs") >= 1, "convert.inputs must be >= 1");
  require(int_list("convert.widths").size() >= 2, "convert.widths needs at least two entries");
  require(integer("train.log_every") >= 0, "train.log_every must be >= 0");
  try {
    net_config().validate();
    train_config().validate();
    (void)schedule();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

NetConfig RunConfig::net_config() const {
  NetConfig c;
  c.mode = str("model.mode") == "unet" ? ArchMode::Unet : ArchMode::Mlp;
  c.data_dim = static_cast<int>(integer("model.data_dim"));
  c.hidden = static_cast<int>(integer("model.hidden"));
  c.mlp_blocks = static_cast<int>(integer("model.blocks"));
  c.in_channels = static_cast<int>(integer("model.in_channels"));
  c.image_size = static_cast<int>(integer("model.image_size"));
  c.base_channels = static_cast<int>(integer("model.base_channels"));
  c.channel_mults = int_list("model.channel_mults");
  c.blocks_per_stage = static_cast<int>(integer("model.blocks_per_stage"));
  c.emb_dim = static_cast<int>(integer("model.emb_dim"));
  c.time_steps = static_cast<int>(integer("snn.time_steps"));
  c.diffusion_steps = static_cast<int>(integer("diffusion.steps"));
  c.lif.decay = real("snn.decay");
  c.lif.threshold = real("snn.threshold");
  c.lif.surrogate_width = real("snn.surrogate_width");
  return c;
}

NoiseSchedule RunConfig::schedule() const {
  return NoiseSchedule::linear(static_cast<int>(integer("diffusion.steps")), real("diffusion.beta_first"),
                               real("diffusion.beta_last"));
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = real("train.lr");
  t.batch_size = static_cast<int>(integer("train.batch_size"));
  t.grad_clip = real("train.grad_clip");
  t.stage1_iterations = static_cast<int>(integer("train.stage1_iterations"));
  t.stage2_iterations = static_cast<int>(integer("train.stage2_iterations"));
  t.seed = seed();
  t.checkpoint_every = static_cast<int>(integer("train.checkpoint_every"));
  return t;
}

SampleOptions RunConfig::sample_options() const {
  SampleOptions o;
  o.solver = parse_solver(str("sample.solver"));
  o.n_steps = static_cast<int>(integer("sample.steps"));
  o.rho = real("sample.rho");
  o.seed = seed();
  o.batch = static_cast<int>(integer("sample.batch"));
  return o;
}

}  // namespace spikediff::app
