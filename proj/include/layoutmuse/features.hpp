#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layoutmuse/imaging.hpp"

namespace layoutmuse::features {

inline constexpr std::size_t kFeatureDim = 512;

using FeatureVec = std::array<float, kFeatureDim>;

struct FeatureBag {
  std::string drawing_id;
  std::vector<FeatureVec> per_region;  // aligned with region ranks
};

/// Pluggable per-patch extractor; the default is `descriptor`.
using Extractor = std::function<FeatureVec(const imaging::Region&)>;

// Descriptor layout (offsets into the 512-d vector, before L2 normalization):
inline constexpr std::size_t kBlockColorOffset = 0;      // 16 blocks x RGB mean      (48)
inline constexpr std::size_t kGradientOffset = 48;       // 16 blocks x 8 orientations (128)
inline constexpr std::size_t kHueOffset = 176;           // 64-bin hue histogram
inline constexpr std::size_t kLuminanceOffset = 240;     // 64-bin luminance histogram
inline constexpr std::size_t kShapeOffset = 304;         // fill ratio, aspect
inline constexpr std::size_t kUsedDims = 306;            // rest is zero padding

/// Deterministic appearance descriptor of a region patch (resampled to 16x16).
FeatureVec descriptor(const imaging::Region& region);

FeatureBag compute_bag(std::string drawing_id, const imaging::RegionSet& regions,
                       const Extractor& extractor = descriptor);

/// Elementwise sum over the bag's region vectors.
FeatureVec sum_features(const FeatureBag& bag);

// Feature file: little-endian "LMF1", u32 count, then per bag
// u32 id length, UTF-8 id, u32 n, n x 512 float32.
void export_features(const std::filesystem::path& path, std::span<const FeatureBag> bags);
std::vector<FeatureBag> import_features(const std::filesystem::path& path);

}  // namespace layoutmuse::features
