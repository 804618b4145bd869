#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "spikediff/app/config.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff::app {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// [N, 1, H, W] in [-1, 1] via x / 127.5 - 1. With `pad32`, smaller images are
/// centered on a 32x32 canvas filled with -1.
Tensor normalize_images(const IdxImages& images, bool pad32);

/// Labels, when given, must match the image count.
Tensor load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels, bool pad32);

/// Mode centers evenly spaced on a circle of radius 0.8.
std::vector<std::array<double, 2>> gmm2d_centers(int modes);

/// `n` points [n, 2] from an equal-weight isotropic mixture with standard
/// deviation `spread`, clamped to [-1, 1].
Tensor gen_gmm2d(int modes, double spread, int n, std::uint64_t seed);

/// Container (model magic) holding a single record named "data".
Tensor load_raw_tensor(const std::filesystem::path& path);
void save_raw_tensor(const std::filesystem::path& path, const Tensor& data);

/// Dataset selected by data.*, with data.limit applied. Values are checked
/// to lie in [-1, 1].
Tensor load_dataset(const RunConfig& config);

}  // namespace spikediff::app
