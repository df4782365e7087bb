#include "dann/rdt_io.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace dann {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff),
                         static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& context) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw io_error("truncated RDT record in " + context);
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_rdt(std::ostream& os, const Tensor& t) {
  os.write("RDT1", 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  for (int i = 0; i < t.size(); ++i) {
    std::uint32_t bits;
    const float v = t[i];
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  }
}

Tensor read_rdt(std::istream& is, const std::string& context) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RDT1", 4) != 0)
    throw data_error("bad RDT magic in " + context);
  const std::uint32_t rank = get_u32(is, context);
  if (rank == 0 || rank > 8)
    throw data_error("unreasonable RDT rank " + std::to_string(rank) + " in " + context);
  Shape shape(rank);
  for (auto& d : shape) {
    const std::uint32_t v = get_u32(is, context);
    if (v == 0 || v > (1u << 28))
      throw data_error("bad RDT dimension in " + context);
    d = static_cast<int>(v);
  }
  Tensor t(shape);
  for (int i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = get_u32(is, context);
    float v;
    std::memcpy(&v, &bits, 4);
    t[i] = v;
  }
  return t;
}

void save_rdt(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  write_rdt(os, t);
  if (!os) throw io_error("write failed for " + path.string());
}

Tensor load_rdt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  return read_rdt(is, path.string());
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries) {
  nlohmann::json manifest;
  manifest["format"] = "rdt-checkpoint-v1";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& e : entries)
    manifest["tensors"].push_back({{"name", e.name}, {"role", e.role}});
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << manifest.dump() << "\n";
  for (const auto& e : entries) write_rdt(os, e.tensor);
  if (!os) throw io_error("write failed for " + path.string());
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line))
    throw data_error("missing checkpoint manifest line in " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw data_error("bad checkpoint manifest in " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "rdt-checkpoint-v1")
    throw data_error("unknown checkpoint format in " + path.string());
  std::vector<CheckpointEntry> entries;
  for (const auto& item : manifest.at("tensors")) {
    CheckpointEntry e;
    e.name = item.at("name").get<std::string>();
    e.role = item.at("role").get<std::string>();
    e.tensor = read_rdt(is, path.string() + ":" + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace dann
