#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layoutmuse/errors.hpp"

namespace layoutmuse::imaging {

/// Row-major interleaved raster with intensities in [0, 1].
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 3;  // 3 = RGB, 4 = RGBA
  std::vector<float> data;

  RasterImage() = default;
  RasterImage(int w, int h, int c, float fill = 0.0f);

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Grayscale eye-fixation map with values in [0, 1].
struct SaliencyMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  SaliencyMap() = default;
  SaliencyMap(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

struct SaliencyPair {
  std::string id;
  RasterImage image;  // RGB
  SaliencyMap saliency;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

using Rgb = std::array<float, 3>;

struct Region {
  int id = 0;
  BBox bbox;
  /// Mask restricted to the bounding box, row-major, bbox.width() * bbox.height().
  std::vector<std::uint8_t> mask;
  /// Center of the bounding box, normalized by the canvas size.
  double cx = 0.0, cy = 0.0;
  int area = 0;
  int rank = 0;
  RasterImage patch;  // RGBA crop; empty until extract_patches
  bool enabled = true;

  bool contains(int x, int y) const {
    return bbox.contains(x, y) && mask[static_cast<std::size_t>(y - bbox.y0) * bbox.width() + (x - bbox.x0)] != 0;
  }
};

struct RegionSet {
  int width = 0;   // canvas the regions were segmented on
  int height = 0;
  std::vector<Region> regions;  // ordered by rank

  std::size_t size() const { return regions.size(); }
  bool empty() const { return regions.empty(); }
  /// Regions with `enabled` set, re-ranked 0..k-1 in their existing order.
  RegionSet enabled_only() const;
};

inline constexpr int kMaxRegions = 13;

struct SegmentConfig {
  /// Gaussian blur sigma as a fraction of min(width, height).
  double blur_sigma_fraction = 0.02;
  /// Flooding threshold relative to the map's maximum.
  double threshold_ratio = 0.5;
  int max_regions = kMaxRegions;
};

// --- PNG I/O ---
RasterImage read_png(const std::filesystem::path& path);
RasterImage decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const RasterImage& image);
std::vector<std::uint8_t> encode_png(const RasterImage& image);
SaliencyMap to_saliency(const RasterImage& gray_or_color);
RasterImage saliency_to_image(const SaliencyMap& map);

/// Loads a drawing and its saliency map. 8-bit saliency is normalized by its
/// observed maximum so dim maps still reach 1.0.
SaliencyPair load_pair(const std::filesystem::path& image_path, const std::filesystem::path& saliency_path);
SaliencyPair make_pair(std::string id, RasterImage image, SaliencyMap saliency);

struct ManifestEntry {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path saliency;
};

/// JSON-lines manifest; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

SaliencyMap gaussian_blur(const SaliencyMap& map, double sigma);

/// Marker-controlled watershed on the blurred map. Markers are regional
/// maxima among above-threshold pixels; flooding visits pixels in order of
/// decreasing blurred saliency. Keeps the `max_regions` largest regions and
/// ranks them by descending area, ties by smaller (cy, cx).
RegionSet watershed_segment(const SaliencyMap& saliency, const SegmentConfig& cfg = {});

/// Fills each region's RGBA patch: the bbox crop with alpha = mask.
RegionSet extract_patches(const SaliencyPair& pair, RegionSet regions);

/// Mean RGB outside every region mask (global mean if nothing is outside).
Rgb background_color(const SaliencyPair& pair, const RegionSet& regions);

// --- raster helpers used by reports and previews ---
RasterImage resize_bilinear(const RasterImage& image, int width, int height);
void draw_box(RasterImage& image, const BBox& box, const Rgb& color, int thickness);
void fill_disc(RasterImage& image, double cx, double cy, double radius, const Rgb& color);
/// Places images left to right on a background, each scaled to `cell_height`.
RasterImage contact_sheet(std::span<const RasterImage> images, int cell_height, const Rgb& background = {1, 1, 1});
RasterImage to_rgb(const RasterImage& image);

}  // namespace layoutmuse::imaging
