#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "spikediff/app/commands.hpp"
#include "spikediff/app/config.hpp"

namespace {

constexpr int kValidationExit = 1;
constexpr int kRuntimeExit = 2;

// One line, key=value pairs, message JSON-quoted.
int report_error(int code, const char* kind, const std::string& command, const std::string& message) {
  std::cerr << "spikediff-error code=" << code << " kind=" << kind << " command=" << (command.empty() ? "-" : command)
            << " message=" << nlohmann::json(message).dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace spikediff::app;

  CLI::App app{"Spiking diffusion engine"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value config file")->required();
    sub->add_option("--set", overrides, "override, key=value (repeatable)")->allow_extra_args(false);
  }

  std::string command;
  try {
    app.parse(argc, argv);
    command = app.get_subcommands().front()->get_name();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kValidationExit, "validation", command, e.what());
  }

  try {
    const RunConfig config = RunConfig::load(config_path, overrides, std::getenv("SPIKEDIFF_SEED"));
    run_command(command, config, std::cout);
  } catch (const ValidationError& e) {
    return report_error(kValidationExit, "validation", command, e.what());
  } catch (const VerifyFailure& e) {
    return report_error(kRuntimeExit, "verify", command, e.what());
  } catch (const std::exception& e) {
    return report_error(kRuntimeExit, "runtime", command, e.what());
  }
  return 0;
}
