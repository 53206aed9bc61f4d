#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "layoutmuse/autodiff/tensor.hpp"

namespace layoutmuse::ad {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Binary container: "LMCK", u32 version, u32 count, then per tensor
// u32 name length, name, u32 rank, rank x u32 extents, float32 data; all
// little-endian. A JSON sidecar `<file>.json` lists names and shapes and
// carries caller metadata (config, config hash, epoch, ...).
void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                  const nlohmann::json& metadata = nlohmann::json::object());
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);
nlohmann::json load_sidecar(const std::filesystem::path& path);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace layoutmuse::ad
