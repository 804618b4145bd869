#include "spikediff/app/commands.hpp"

#include <filesystem>
#include <random>

#include "json.hpp"
#include "spikediff/app/dataset.hpp"
#include "spikediff/app/image_io.hpp"
#include "spikediff/app/verify.hpp"
#include "spikediff/checkpoint.hpp"
#include "spikediff/conversion.hpp"
#include "spikediff/denoiser.hpp"
#include "spikediff/energy.hpp"
#include "spikediff/training.hpp"

namespace spikediff::app {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

fs::path prepare_out_dir(const RunConfig& config) {
  const fs::path dir = config.out_dir();
  fs::create_directories(dir);
  return dir;
}

Json manifest(const std::string& command, const RunConfig& config) {
  Json j;
  j["command"] = command;
  Json values;
  for (const auto& [k, v] : config.values()) values[k] = v;
  j["config"] = std::move(values);
  j["outputs"] = Json::object();
  return j;
}

void add_output(Json& m, const std::string& name, const fs::path& path) {
  m["outputs"][name] = {{"path", path.filename().string()}, {"fnv1a64", file_digest(path)}};
}

void check_data_shape(const Tensor& data, const SpikingNet& net) {
  Shape item(data.shape().begin() + 1, data.shape().end());
  if (item != net.config().sample_shape()) {
    throw ValidationError("dataset samples " + shape_str(item) + " do not match the model input " +
                          shape_str(net.config().sample_shape()));
  }
}

TrainObserver progress(const RunConfig& config, std::ostream& log, const char* stage) {
  const auto every = config.integer("train.log_every");
  if (every <= 0) return {};
  return [&log, every, stage](int it, double loss) {
    if ((it + 1) % every == 0) log << stage << " iter " << it + 1 << " loss " << loss << '\n' << std::flush;
  };
}

Json loss_summary(const std::vector<double>& losses) {
  if (losses.empty()) return {{"iterations", 0}};
  return {{"iterations", losses.size()},
          {"smoothed_first", smoothed_head(losses, 20)},
          {"smoothed_last", smoothed_tail(losses, 20)}};
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train", "finetune", "sample", "convert", "energy", "verify"};
  return names;
}

SpikingNet build_model(const RunConfig& config) {
  SpikingNet net(config.net_config(), config.seed());
  if (const auto& path = config.str("checkpoint"); !path.empty()) load_checkpoint(path, net);
  return net;
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  const Tensor data = load_dataset(config);
  SpikingNet net(config.net_config(), config.seed());
  check_data_shape(data, net);
  const fs::path dir = prepare_out_dir(config);
  const fs::path ckpt = dir / "stage1.sdmc";

  TrainConfig tc = config.train_config();
  tc.checkpoint_path = ckpt;
  const auto result = train_stage1(net, config.schedule(), data, tc, progress(config, log, "stage1"));

  save_checkpoint(ckpt, net);
  const fs::path csv = dir / "stage1_loss.csv";
  write_loss_csv(csv, result.losses);

  Json m = manifest("train", config);
  m["loss"] = loss_summary(result.losses);
  add_output(m, "checkpoint", ckpt);
  add_output(m, "loss_curve", csv);
  write_text(dir / "train_manifest.json", m.dump(2) + "\n");
  log << "wrote " << ckpt.string() << '\n';
}

void cmd_finetune(const RunConfig& config, std::ostream& log) {
  const fs::path dir = prepare_out_dir(config);
  RunConfig source = config;
  if (source.str("checkpoint").empty()) {
    const fs::path fallback = dir / "stage1.sdmc";
    if (!fs::exists(fallback)) throw ValidationError("finetune needs checkpoint= or a stage-1 model in out_dir");
    source.set("checkpoint", fallback.string());
  }
  SpikingNet net = build_model(source);
  if (net.block_type() == BlockType::Tsm) throw ValidationError("checkpoint is already fine-tuned");
  const Tensor data = load_dataset(config);
  check_data_shape(data, net);

  TrainConfig tc = config.train_config();
  TrainResult result;
  SpikingNet tuned = finetune_stage2(net, config.schedule(), data, tc, &result, progress(config, log, "stage2"));

  const fs::path ckpt = dir / "stage2.sdmc";
  save_checkpoint(ckpt, tuned);
  const fs::path csv = dir / "stage2_loss.csv";
  write_loss_csv(csv, result.losses);

  Json m = manifest("finetune", config);
  m["source_checkpoint"] = fs::path(source.str("checkpoint")).filename().string();
  m["loss"] = loss_summary(result.losses);
  Json p;
  for (const auto& name : tuned.params().names()) {
    if (name.ends_with(".tsm_p")) p[name] = tuned.params().at(name).vec();
  }
  m["temporal_parameters"] = std::move(p);
  add_output(m, "checkpoint", ckpt);
  add_output(m, "loss_curve", csv);
  write_text(dir / "finetune_manifest.json", m.dump(2) + "\n");
  log << "wrote " << ckpt.string() << '\n';
}

void cmd_sample(const RunConfig& config, std::ostream& log) {
  SpikingNet net = build_model(config);
  const auto schedule = config.schedule();
  SpikingDenoiser model(net);
  SampleOptions opt = config.sample_options();
  const int count = static_cast<int>(config.integer("sample.count"));

  HStats h;
  if (opt.solver == Solver::Analytic) {
    const Tensor data = load_dataset(config);
    check_data_shape(data, net);
    const auto trajectory = uniform_trajectory(schedule.steps(), opt.n_steps);
    {
      // h describes the guided network that will be sampled.
      GuidanceScope guidance(model, opt.rho);
      h = estimate_h(model, schedule, data, trajectory, static_cast<int>(config.integer("sample.n_mc")),
                     config.seed() + 1, opt.batch);
    }
    opt.hstats = &h;
  }
  const Tensor x = sample(model, schedule, net.config().sample_shape(), count, opt);

  const fs::path dir = prepare_out_dir(config);
  Json m = manifest("sample", config);
  m["solver"] = solver_name(opt.solver);
  m["steps"] = opt.n_steps;
  m["rho"] = opt.rho;
  m["seed"] = opt.seed;
  if (net.config().mode == ArchMode::Mlp) {
    const fs::path csv = dir / "samples.csv";
    write_points_csv(csv, x);
    add_output(m, "points", csv);
  } else if (net.config().in_channels == 1) {
    const fs::path pgm = dir / "samples.pgm";
    write_pgm(pgm, tile_images(x, static_cast<int>(config.integer("sample.grid_cols"))));
    add_output(m, "grid", pgm);
  }
  const fs::path raw = dir / "samples.sdmc";
  save_raw_tensor(raw, x);
  add_output(m, "tensor", raw);
  write_text(dir / "sample_manifest.json", m.dump(2) + "\n");
  log << "wrote " << count << " samples to " << dir.string() << '\n';
}

void cmd_convert(const RunConfig& config, std::ostream& log) {
  const fs::path dir = prepare_out_dir(config);
  std::mt19937_64 rng(config.seed());
  Json m = manifest("convert", config);
  QuantizedAnn ann;
  if (const auto& path = config.str("convert.ann"); !path.empty()) {
    ann = load_quantized_ann(path);
  } else {
    ann = random_quantized_ann(config.int_list("convert.widths"), static_cast<int>(config.integer("convert.bits")),
                               rng);
    const fs::path annq = dir / "ann.annq";
    save_quantized_ann(annq, ann);
    add_output(m, "quantized_ann", annq);
  }
  const IfSnn snn = convert(ann);

  const auto width = ann.layers.front().weight.dim(0);
  Tensor inputs({config.integer("convert.inputs"), width});
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& v : inputs.data()) v = static_cast<float>(unit(rng));
  const auto report = divergence_report(ann, snn, inputs);

  const fs::path ckpt = dir / "converted.sdmc";
  save_if_snn(ckpt, snn);
  const fs::path json = dir / "divergence.json";
  write_text(json, divergence_report_json(report) + "\n");
  add_output(m, "snn", ckpt);
  add_output(m, "divergence", json);
  m["time_steps"] = snn.time_steps;
  write_text(dir / "convert_manifest.json", m.dump(2) + "\n");
  for (std::size_t l = 0; l < report.mean_abs_gap.size(); ++l) {
    log << "layer " << l << " mean |Q - Q~| " << report.mean_abs_gap[l] << '\n';
  }
}

void cmd_energy(const RunConfig& config, std::ostream& log) {
  SpikingNet net = build_model(config);
  const int batch = static_cast<int>(config.integer("energy.batch"));
  int t = static_cast<int>(config.integer("energy.t"));
  if (t == 0) t = (net.config().diffusion_steps + 1) / 2;
  int n_steps = static_cast<int>(config.integer("energy.n_steps"));
  if (n_steps == 0) n_steps = static_cast<int>(config.integer("sample.steps"));

  std::mt19937_64 rng(config.seed());
  Shape shape = net.config().sample_shape();
  shape.insert(shape.begin(), batch);
  const Tensor x = standard_normal(shape, rng);
  const std::vector<int> steps(static_cast<std::size_t>(batch), t);
  const auto rates = profile_run(net, x, steps);
  const auto report = energy_report(net, rates, n_steps);

  const fs::path dir = prepare_out_dir(config);
  const fs::path json = dir / "energy.json";
  write_text(json, energy_report_json(report) + "\n");
  Json m = manifest("energy", config);
  m["profile_step"] = t;
  add_output(m, "report", json);
  write_text(dir / "energy_manifest.json", m.dump(2) + "\n");
  log << "energy per step " << report.totals.pj << " pJ, per sample " << report.totals.per_sample_mj << " mJ\n";
}

void cmd_verify(const RunConfig& config, std::ostream& log) {
  const auto results = run_verify(config.seed(), log);
  std::string failed;
  for (const auto& r : results) {
    if (!r.passed) failed += (failed.empty() ? "" : ",") + r.name;
  }
  if (!failed.empty()) throw VerifyFailure("suites failed: " + failed);
}

void run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  if (name == "train") return cmd_train(config, log);
  if (name == "finetune") return cmd_finetune(config, log);
  if (name == "sample") return cmd_sample(config, log);
  if (name == "convert") return cmd_convert(config, log);
  if (name == "energy") return cmd_energy(config, log);
  if (name == "verify") return cmd_verify(config, log);
  throw ValidationError("unknown command '" + name + "'");
}

}  // namespace spikediff::app
