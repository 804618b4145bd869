#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikediff/app/config.hpp"
#include "spikediff/network.hpp"

namespace spikediff::app {

/// A verification suite failed.
class VerifyFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::vector<std::string>& command_names();

/// Network from the config, loaded from `checkpoint` when set.
SpikingNet build_model(const RunConfig& config);

void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_finetune(const RunConfig& config, std::ostream& log);
void cmd_sample(const RunConfig& config, std::ostream& log);
void cmd_convert(const RunConfig& config, std::ostream& log);
void cmd_energy(const RunConfig& config, std::ostream& log);
void cmd_verify(const RunConfig& config, std::ostream& log);

/// Throws ValidationError for an unknown command.
void run_command(const std::string& name, const RunConfig& config, std::ostream& log);

}  // namespace spikediff::app
