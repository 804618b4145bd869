#include "spikediff/app/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "spikediff/checkpoint.hpp"

namespace spikediff::app {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw DatasetError("truncated IDX header");
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) | (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) | static_cast<std::uint32_t>(bytes[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void check_magic(std::uint32_t got, std::uint32_t want) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x, expected 0x%08x", got, want);
    throw DatasetError(buf);
  }
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  check_magic(read_be32(bytes, 0), kIdxImagesMagic);
  IdxImages img;
  img.count = read_be32(bytes, 4);
  img.rows = read_be32(bytes, 8);
  img.cols = read_be32(bytes, 12);
  const std::uint64_t n = static_cast<std::uint64_t>(img.count) * img.rows * img.cols;
  if (bytes.size() - 16 < n) throw DatasetError("truncated IDX image payload");
  if (bytes.size() - 16 > n) throw DatasetError("trailing bytes after IDX image payload");
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  if (images.pixels.size() != static_cast<std::size_t>(images.count) * images.rows * images.cols) {
    throw DatasetError("pixel count does not match the declared dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, images.count);
  put_be32(out, images.rows);
  put_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  check_magic(read_be32(bytes, 0), kIdxLabelsMagic);
  const std::uint32_t n = read_be32(bytes, 4);
  if (bytes.size() - 8 < n) throw DatasetError("truncated IDX label payload");
  if (bytes.size() - 8 > n) throw DatasetError("trailing bytes after IDX label payload");
  return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError("write failed for " + path.string());
}

Tensor normalize_images(const IdxImages& images, bool pad32) {
  const std::int64_t h = images.rows, w = images.cols;
  std::int64_t H = h, W = w;
  if (pad32) {
    if (h > 32 || w > 32) throw DatasetError("cannot pad images larger than 32x32");
    H = W = 32;
  }
  const std::int64_t top = (H - h) / 2, left = (W - w) / 2;
  Tensor out({static_cast<std::int64_t>(images.count), 1, H, W}, -1.0f);
  for (std::int64_t n = 0; n < images.count; ++n) {
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        const double px = images.pixels[(n * h + r) * w + c];
        out[(n * H + top + r) * W + left + c] = static_cast<float>(px / 127.5 - 1.0);
      }
    }
  }
  return out;
}

Tensor load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels, bool pad32) {
  const auto img = parse_idx_images(read_file(images));
  if (!labels.empty()) {
    const auto lab = parse_idx_labels(read_file(labels));
    if (lab.size() != img.count) {
      throw DatasetError("label count " + std::to_string(lab.size()) + " differs from image count " +
                         std::to_string(img.count));
    }
  }
  return normalize_images(img, pad32);
}

std::vector<std::array<double, 2>> gmm2d_centers(int modes) {
  if (modes < 1) throw std::invalid_argument("modes must be >= 1");
  std::vector<std::array<double, 2>> c(modes);
  for (int k = 0; k < modes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / modes;
    c[k] = {0.8 * std::cos(a), 0.8 * std::sin(a)};
  }
  return c;
}

Tensor gen_gmm2d(int modes, double spread, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("point count must be >= 1");
  if (!(spread >= 0.0)) throw std::invalid_argument("spread must be >= 0");
  const auto centers = gmm2d_centers(modes);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, modes - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    const auto& c = centers[pick(rng)];
    for (int d = 0; d < 2; ++d) {
      out[2 * i + d] = static_cast<float>(std::clamp(c[d] + spread * normal(rng), -1.0, 1.0));
    }
  }
  return out;
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  auto records = read_container_file(path, kModelMagic);
  for (auto& r : records) {
    if (r.name == "data") return std::move(r.value);
  }
  throw DatasetError(path.string() + " has no 'data' record");
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor& data) {
  write_container_file(path, kModelMagic, {{"data", data}});
}

Tensor load_dataset(const RunConfig& config) {
  const std::string source = config.str("data.source");
  Tensor data;
  if (source == "gmm2d") {
    data = gen_gmm2d(static_cast<int>(config.integer("data.modes")), config.real("data.spread"),
                     static_cast<int>(config.integer("data.count")), config.seed());
  } else if (source == "mnist-idx") {
    if (config.str("data.images").empty()) throw ValidationError("data.images is required for mnist-idx");
    data = load_mnist_idx(config.str("data.images"), config.str("data.labels"), config.flag("data.pad32"));
  } else {
    if (config.str("data.path").empty()) throw ValidationError("data.path is required for raw-tensor");
    data = load_raw_tensor(config.str("data.path"));
  }
  if (data.rank() < 2 || data.dim(0) == 0) throw DatasetError("dataset is empty or has no sample axis");
  for (float v : data.data()) {
    if (!(v >= -1.0f && v <= 1.0f)) throw DatasetError("dataset values must lie in [-1, 1]");
  }
  const std::int64_t limit = config.integer("data.limit");
  if (limit > 0 && limit < data.dim(0)) {
    Shape shape = data.shape();
    shape[0] = limit;
    const std::size_t keep = data.size() / static_cast<std::size_t>(data.dim(0)) * static_cast<std::size_t>(limit);
    data = Tensor(shape, std::vector<float>(data.vec().begin(), data.vec().begin() + keep));
  }
  return data;
}

}  // namespace spikediff::app
