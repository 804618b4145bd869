#include "spikediff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "spikediff/network.hpp"

namespace spikediff {

namespace {

static_assert(sizeof(float) == 4, "f32 payload requires 32-bit float");

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError(std::string("truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string magic_str(const Magic& m) { return std::string(m.begin(), m.end()); }

}  // namespace

void write_container(std::ostream& out, const Magic& magic, const std::vector<Record>& records) {
  out.write(magic.data(), 4);
  put_u32(out, kContainerVersion);
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(out, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw CheckpointError("write failed");
}

std::vector<Record> read_container(std::istream& in, const Magic& magic) {
  Magic got{};
  if (!in.read(got.data(), 4)) throw CheckpointError("truncated magic");
  if (got != magic) {
    throw CheckpointError("bad magic '" + magic_str(got) + "', expected '" + magic_str(magic) + "'");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kContainerVersion) {
    throw CheckpointError("unsupported container version " + std::to_string(version));
  }
  std::vector<Record> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    Record r;
    const std::uint32_t len = get_u32(in, "name length");
    r.name.resize(len);
    if (!in.read(r.name.data(), len)) throw CheckpointError("truncated name");
    const std::uint32_t rank = get_u32(in, "rank");
    if (rank > 8) throw CheckpointError("record '" + r.name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in, "dims");
    std::vector<float> payload(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : payload) v = std::bit_cast<float>(get_u32(in, "payload"));
    r.value = Tensor(std::move(shape), std::move(payload));
    records.push_back(std::move(r));
  }
  return records;
}

void write_container_file(const std::filesystem::path& path, const Magic& magic,
                          const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_container(out, magic, records);
}

std::vector<Record> read_container_file(const std::filesystem::path& path, const Magic& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_container(in, magic);
}

void save_checkpoint(const std::filesystem::path& path, const SpikingNet& net) {
  std::vector<Record> records;
  for (const auto& name : net.params().names()) records.push_back({name, net.params().at(name)});
  write_container_file(path, kModelMagic, records);
}

void load_checkpoint(const std::filesystem::path& path, SpikingNet& net) {
  auto records = read_container_file(path, kModelMagic);
  bool temporal = false;
  for (const auto& r : records) temporal = temporal || r.name.ends_with(".tsm_p");
  if (temporal && net.block_type() != BlockType::Tsm) net = convert_to_tsm(net);

  std::set<std::string> seen;
  auto& store = net.params();
  for (auto& r : records) {
    if (!store.contains(r.name)) throw CheckpointError("unexpected tensor '" + r.name + "'");
    Tensor& dst = store.at(r.name);
    if (dst.shape() != r.value.shape()) {
      throw CheckpointError("tensor '" + r.name + "' has shape " + shape_str(r.value.shape()) + ", model expects " +
                            shape_str(dst.shape()));
    }
    dst = std::move(r.value);
    seen.insert(r.name);
  }
  for (const auto& name : store.names()) {
    if (!seen.count(name)) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  }
}

}  // namespace spikediff
