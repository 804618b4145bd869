#include "spikediff/app/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spikediff/app/dataset.hpp"

namespace spikediff::app {

std::uint8_t to_pixel(float x) {
  const double v = std::clamp(static_cast<double>(x), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::round((v + 1.0) * 127.5));
}

GrayImage tile_images(const Tensor& images, int cols) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ShapeError("tile_images expects [N, 1, H, W], got " + shape_str(images.shape()));
  }
  if (cols < 1) throw std::invalid_argument("grid needs at least one column");
  const std::int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const std::int64_t c = std::min<std::int64_t>(cols, n);
  const std::int64_t r = (n + c - 1) / c;
  GrayImage g;
  g.width = static_cast<int>(c * w);
  g.height = static_cast<int>(r * h);
  g.pixels.assign(static_cast<std::size_t>(g.width) * g.height, 0);
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t oy = (k / c) * h, ox = (k % c) * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        g.pixels[(oy + y) * g.width + ox + x] = to_pixel(images[(k * h + y) * w + x]);
      }
    }
  }
  return g;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw std::runtime_error(path.string() + " is not a binary PGM");
  GrayImage g;
  g.width = std::stoi(token());
  g.height = std::stoi(token());
  if (token() != "255") throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
  if (bytes.size() < pos + n) throw std::runtime_error(path.string() + ": truncated raster");
  g.pixels.assign(bytes.begin() + pos, bytes.begin() + pos + n);
  return g;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> losses) {
  std::ostringstream out;
  out << "iter,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, losses[i]);
    out << buf;
  }
  write_text(path, out.str());
}

void write_points_csv(const std::filesystem::path& path, const Tensor& points) {
  if (points.rank() != 2) throw ShapeError("points must be [N, D]");
  const std::int64_t n = points.dim(0), d = points.dim(1);
  std::ostringstream out;
  for (std::int64_t j = 0; j < d; ++j) out << (j ? "," : "") << 'x' << j;
  out << '\n';
  char buf[32];
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(points[i * d + j]));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::string file_digest(const std::filesystem::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : read_file(path)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace spikediff::app
