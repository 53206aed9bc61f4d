#include "layoutmuse/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace layoutmuse::features {

namespace {

constexpr int kSide = 16;
constexpr int kBlock = 4;

struct Patch16 {
  std::array<float, kSide * kSide * 3> rgb{};
  std::array<float, kSide * kSide> alpha{};
};

// Area-weighted bilinear resample of the RGBA patch; color is premultiplied by
// alpha so pixels outside the mask read as black.
Patch16 resample(const imaging::RasterImage& patch) {
  Patch16 out;
  const imaging::RasterImage small = imaging::resize_bilinear(patch, kSide, kSide);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const float a = small.channels == 4 ? small.at(x, y, 3) : 1.0f;
      out.alpha[static_cast<std::size_t>(y * kSide + x)] = a;
      for (int c = 0; c < 3; ++c) out.rgb[static_cast<std::size_t>((y * kSide + x) * 3 + c)] = small.at(x, y, c) * a;
    }
  return out;
}

float luminance(const Patch16& p, int x, int y) {
  const std::size_t i = static_cast<std::size_t>((y * kSide + x) * 3);
  return 0.299f * p.rgb[i] + 0.587f * p.rgb[i + 1] + 0.114f * p.rgb[i + 2];
}

double hue_of(float r, float g, float b) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  if (d <= 0.0f) return 0.0;
  double h;
  if (mx == r) {
    h = std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
  if (h < 0) h += 1.0;
  return h;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("feature file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

FeatureVec descriptor(const imaging::Region& region) {
  FeatureVec v{};
  const imaging::RasterImage& raster = region.patch;
  if (raster.width <= 0 || raster.height <= 0) throw InvalidArgument("descriptor needs a non-empty patch");
  const Patch16 p = resample(raster);

  // Block color means.
  for (int by = 0; by < kSide / kBlock; ++by)
    for (int bx = 0; bx < kSide / kBlock; ++bx) {
      const std::size_t block = static_cast<std::size_t>(by * (kSide / kBlock) + bx);
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = 0; y < kBlock; ++y)
          for (int x = 0; x < kBlock; ++x)
            acc += p.rgb[static_cast<std::size_t>(((by * kBlock + y) * kSide + bx * kBlock + x) * 3 + c)];
        v[kBlockColorOffset + block * 3 + static_cast<std::size_t>(c)] = static_cast<float>(acc / (kBlock * kBlock));
      }
    }

  // Gradient orientation histograms (central differences, clamped borders).
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const float gx = luminance(p, std::min(x + 1, kSide - 1), y) - luminance(p, std::max(x - 1, 0), y);
      const float gy = luminance(p, x, std::min(y + 1, kSide - 1)) - luminance(p, x, std::max(y - 1, 0));
      const float mag = std::sqrt(gx * gx + gy * gy);
      if (mag <= 1e-7f) continue;
      double ang = std::atan2(gy, gx);
      if (ang < 0) ang += 2 * std::numbers::pi;
      const int bin = std::min(7, static_cast<int>(ang / (2 * std::numbers::pi) * 8));
      const std::size_t block = static_cast<std::size_t>((y / kBlock) * (kSide / kBlock) + x / kBlock);
      v[kGradientOffset + block * 8 + static_cast<std::size_t>(bin)] += mag;
    }

  // Hue and luminance histograms over covered pixels, normalized to unit mass.
  double mass = 0.0;
  for (int i = 0; i < kSide * kSide; ++i) {
    const float a = p.alpha[static_cast<std::size_t>(i)];
    if (a <= 0.0f) continue;
    const float r = p.rgb[static_cast<std::size_t>(i * 3)] / a;
    const float g = p.rgb[static_cast<std::size_t>(i * 3 + 1)] / a;
    const float b = p.rgb[static_cast<std::size_t>(i * 3 + 2)] / a;
    const int hbin = std::min(63, static_cast<int>(hue_of(r, g, b) * 64));
    const float lum = std::clamp(0.299f * r + 0.587f * g + 0.114f * b, 0.0f, 1.0f);
    const int lbin = std::min(63, static_cast<int>(lum * 64));
    v[kHueOffset + static_cast<std::size_t>(hbin)] += a;
    v[kLuminanceOffset + static_cast<std::size_t>(lbin)] += a;
    mass += a;
  }
  if (mass > 0) {
    for (std::size_t i = 0; i < 64; ++i) {
      v[kHueOffset + i] = static_cast<float>(v[kHueOffset + i] / mass);
      v[kLuminanceOffset + i] = static_cast<float>(v[kLuminanceOffset + i] / mass);
    }
  }

  const double bw = region.bbox.width() > 0 ? region.bbox.width() : raster.width;
  const double bh = region.bbox.height() > 0 ? region.bbox.height() : raster.height;
  const double area = region.area > 0 ? region.area : bw * bh;
  v[kShapeOffset] = static_cast<float>(area / (bw * bh));
  v[kShapeOffset + 1] = static_cast<float>(bw / (bw + bh));

  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (float& x : v) x = static_cast<float>(x / norm);
  }
  return v;
}

FeatureBag compute_bag(std::string drawing_id, const imaging::RegionSet& regions, const Extractor& extractor) {
  FeatureBag bag;
  bag.drawing_id = std::move(drawing_id);
  for (const imaging::Region& r : regions.regions) bag.per_region.push_back(extractor(r));
  return bag;
}

FeatureVec sum_features(const FeatureBag& bag) {
  if (bag.per_region.empty()) throw EmptyBag("feature bag '" + bag.drawing_id + "' is empty");
  // Double accumulation keeps the result independent of region order for
  // any realistic bag size.
  std::array<double, kFeatureDim> acc{};
  for (const FeatureVec& v : bag.per_region)
    for (std::size_t i = 0; i < kFeatureDim; ++i) acc[i] += v[i];
  FeatureVec out{};
  for (std::size_t i = 0; i < kFeatureDim; ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

void export_features(const std::filesystem::path& path, std::span<const FeatureBag> bags) {
  static_assert(std::endian::native == std::endian::little, "feature files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write '" + path.string() + "'");
  out.write("LMF1", 4);
  write_u32(out, static_cast<std::uint32_t>(bags.size()));
  for (const FeatureBag& bag : bags) {
    write_u32(out, static_cast<std::uint32_t>(bag.drawing_id.size()));
    out.write(bag.drawing_id.data(), static_cast<std::streamsize>(bag.drawing_id.size()));
    write_u32(out, static_cast<std::uint32_t>(bag.per_region.size()));
    for (const FeatureVec& v : bag.per_region) {
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(kFeatureDim * sizeof(float)));
    }
  }
}

std::vector<FeatureBag> import_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LMF1", 4) != 0) throw FormatError("bad feature file magic");
  const std::uint32_t count = read_u32(in);
  std::vector<FeatureBag> bags;
  for (std::uint32_t b = 0; b < count; ++b) {
    FeatureBag bag;
    const std::uint32_t id_len = read_u32(in);
    bag.drawing_id.resize(id_len);
    if (!in.read(bag.drawing_id.data(), id_len)) throw FormatError("feature file truncated in id");
    const std::uint32_t n = read_u32(in);
    bag.per_region.resize(n);
    for (FeatureVec& v : bag.per_region) {
      if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(kFeatureDim * sizeof(float)))) {
        throw LengthError("feature vector shorter than 512 values in '" + bag.drawing_id + "'");
      }
    }
    bags.push_back(std::move(bag));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw LengthError("trailing data after last record: a vector is not 512 values long");
  }
  return bags;
}

}  // namespace layoutmuse::features
