#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spikediff/diffusion.hpp"
#include "spikediff/network.hpp"
#include "spikediff/training.hpp"

namespace spikediff::app {

/// Bad configuration or arguments, detected before any work starts.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueType { Int, UInt, Real, Bool, String, IntList, Choice };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;
  std::string help;
  std::vector<std::string> choices;
};

const std::vector<KeySpec>& config_schema();
const KeySpec* find_key(std::string_view key);

/// Defaults layered over the schema defaults by each preset.
std::map<std::string, std::string> preset_values(const std::string& preset);

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& origin);

class RunConfig {
 public:
  /// Precedence, lowest first: schema defaults, preset, SPIKEDIFF_SEED
  /// (`env_seed`), config file, `--set key=value` overrides.
  static RunConfig resolve(const std::map<std::string, std::string>& file_values,
                           const std::vector<std::string>& overrides, const char* env_seed);
  static RunConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides,
                        const char* env_seed);
  static RunConfig defaults(const std::string& preset = "tiny");

  void set(const std::string& key, const std::string& value);
  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::uint64_t seed() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Cross-key checks. Throws ValidationError.
  void validate() const;

  NetConfig net_config() const;
  NoiseSchedule schedule() const;
  TrainConfig train_config() const;
  SampleOptions sample_options() const;
  std::filesystem::path out_dir() const { return str("out_dir"); }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spikediff::app
