#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikediff/tensor.hpp"

namespace spikediff {

class SpikingNet;

/// Malformed, truncated, or mismatched checkpoint data.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Magic = std::array<char, 4>;

inline constexpr Magic kModelMagic{'S', 'D', 'M', 'C'};
inline constexpr Magic kQuantMagic{'A', 'N', 'N', 'Q'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Record {
  std::string name;
  Tensor value;
};

/// Tensor container layout (all integers little-endian u32):
///   magic[4] version
///   repeated: name_len name[name_len] rank dims[rank] f32 payload
void write_container(std::ostream& out, const Magic& magic, const std::vector<Record>& records);
std::vector<Record> read_container(std::istream& in, const Magic& magic);

void write_container_file(const std::filesystem::path& path, const Magic& magic,
                          const std::vector<Record>& records);
std::vector<Record> read_container_file(const std::filesystem::path& path, const Magic& magic);

/// Every stored tensor of the network, buffers included, in registration order.
void save_checkpoint(const std::filesystem::path& path, const SpikingNet& net);

/// Loads tensors into a network built from the matching configuration. A
/// checkpoint holding temporal parameters converts a pre-spike network first.
/// Missing or extra names and shape mismatches are errors.
void load_checkpoint(const std::filesystem::path& path, SpikingNet& net);

}  // namespace spikediff
