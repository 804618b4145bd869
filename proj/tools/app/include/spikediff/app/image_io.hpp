#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spikediff/tensor.hpp"

namespace spikediff::app {

/// Clamp to [-1, 1], then (x + 1) * 127.5 rounded half away from zero.
std::uint8_t to_pixel(float x);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Tiles single-channel images [N, 1, H, W] into a grid `cols` wide. Unused
/// cells are black.
GrayImage tile_images(const Tensor& images, int cols);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Header `iter,loss`, one row per iteration.
void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses);

/// Header `x0,x1,...`, one row per point of [N, D].
void write_points_csv(const std::filesystem::path& path, const Tensor& points);

/// FNV-1a 64 of a file, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace spikediff::app
