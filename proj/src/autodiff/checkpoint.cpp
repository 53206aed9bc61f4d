#include "layoutmuse/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "layoutmuse/errors.hpp"

namespace layoutmuse::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint truncated");
  return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a temporary name first so readers never see a half-written file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("IoError", "cannot write checkpoint '" + path.string() + "'");
    out.write("LMCK", 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
      put_u32(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
      for (int d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t.value.ptr()), static_cast<std::streamsize>(t.value.size() * sizeof(float)));
    }
    if (!out) throw Error("IoError", "failed writing checkpoint '" + path.string() + "'");
  }
  nlohmann::json side = metadata;
  side["format"] = "LMCK";
  side["version"] = kVersion;
  nlohmann::json list = nlohmann::json::array();
  for (const NamedTensor& t : tensors) list.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  side["tensors"] = std::move(list);
  std::filesystem::path side_tmp = sidecar_path(path);
  side_tmp += ".tmp";
  std::ofstream(side_tmp) << side.dump(2) << "\n";
  std::filesystem::rename(tmp, path);
  std::filesystem::rename(side_tmp, sidecar_path(path));
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NoCheckpoint("no checkpoint at '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LMCK", 4) != 0) throw FormatError("not a checkpoint: bad magic");
  if (get_u32(in) != kVersion) throw FormatError("unsupported checkpoint version");
  const std::uint32_t count = get_u32(in);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get_u32(in));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw FormatError("checkpoint truncated");
    Shape shape(get_u32(in));
    for (int& d : shape) d = static_cast<int>(get_u32(in));
    t.value = Tensor(shape);
    if (!in.read(reinterpret_cast<char*>(t.value.ptr()), static_cast<std::streamsize>(t.value.size() * sizeof(float)))) {
      throw FormatError("checkpoint truncated in '" + t.name + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::json load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw NoCheckpoint("no checkpoint sidecar for '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint sidecar: ") + e.what());
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace layoutmuse::ad
