#include "layoutmuse/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <tuple>

#include "json.hpp"

namespace layoutmuse::imaging {

RasterImage::RasterImage(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

RegionSet RegionSet::enabled_only() const {
  RegionSet out;
  out.width = width;
  out.height = height;
  for (const Region& r : regions) {
    if (!r.enabled) continue;
    Region copy = r;
    copy.rank = static_cast<int>(out.regions.size());
    out.regions.push_back(std::move(copy));
  }
  return out;
}

// ------------------------------------------------------------------- PNG I/O

namespace {

RasterImage from_png_image(png_image& image, const std::vector<png_byte>& buffer) {
  const bool has_alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  RasterImage out(static_cast<int>(image.width), static_cast<int>(image.height), has_alpha ? 4 : 3);
  const std::size_t n = out.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < out.channels; ++c) {
      out.data[i * static_cast<std::size_t>(out.channels) + static_cast<std::size_t>(c)] = buffer[i * 4 + static_cast<std::size_t>(c)] / 255.0f;
    }
  }
  return out;
}

std::vector<png_byte> to_rgba8(const RasterImage& image) {
  std::vector<png_byte> buffer(image.pixel_count() * 4);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 4; ++c) {
      float v = 1.0f;
      if (c < 3) {
        v = image.channels == 1 ? image.data[i] : image.data[i * static_cast<std::size_t>(image.channels) + static_cast<std::size_t>(c)];
      } else if (image.channels == 4) {
        v = image.data[i * 4 + 3];
      }
      buffer[i * 4 + static_cast<std::size_t>(c)] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  return buffer;
}

}  // namespace

RasterImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DecodeError("cannot decode '" + path.string() + "': " + image.message);
  }
  const png_uint_32 original_format = image.format;
  image.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    throw DecodeError("cannot decode '" + path.string() + "': " + image.message);
  }
  image.format = original_format;
  return from_png_image(image, buffer);
}

RasterImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("cannot decode PNG data: ") + image.message);
  }
  const png_uint_32 original_format = image.format;
  image.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    throw DecodeError(std::string("cannot decode PNG data: ") + image.message);
  }
  image.format = original_format;
  return from_png_image(image, buffer);
}

void write_png(const std::filesystem::path& path, const RasterImage& image) {
  const std::vector<std::uint8_t> bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> encode_png(const RasterImage& image) {
  std::vector<png_byte> rgba = to_rgba8(image);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  if (image.channels != 4) {
    // Pack to RGB.
    std::vector<png_byte> rgb(image.pixel_count() * 3);
    for (std::size_t i = 0; i < image.pixel_count(); ++i)
      for (int c = 0; c < 3; ++c) rgb[i * 3 + static_cast<std::size_t>(c)] = rgba[i * 4 + static_cast<std::size_t>(c)];
    rgba.swap(rgb);
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, rgba.data(), 0, nullptr)) {
    throw Error("IoError", std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, rgba.data(), 0, nullptr)) {
    throw Error("IoError", std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

SaliencyMap to_saliency(const RasterImage& image) {
  SaliencyMap map(image.width, image.height);
  const int color = std::min(image.channels, 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    float acc = 0.0f;
    for (int c = 0; c < color; ++c) acc += image.data[i * static_cast<std::size_t>(image.channels) + static_cast<std::size_t>(c)];
    map.data[i] = acc / static_cast<float>(color);
  }
  return map;
}

RasterImage saliency_to_image(const SaliencyMap& map) {
  RasterImage out(map.width, map.height, 3);
  for (std::size_t i = 0; i < map.data.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] = map.data[i];
  return out;
}

SaliencyPair make_pair(std::string id, RasterImage image, SaliencyMap saliency) {
  if (image.width != saliency.width || image.height != saliency.height) {
    throw DimensionMismatch("drawing is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                            " but saliency is " + std::to_string(saliency.width) + "x" +
                            std::to_string(saliency.height));
  }
  const float peak = saliency.data.empty() ? 0.0f : *std::max_element(saliency.data.begin(), saliency.data.end());
  if (peak > 0.0f) {
    for (float& v : saliency.data) v /= peak;
  }
  SaliencyPair pair;
  pair.id = std::move(id);
  pair.image = to_rgb(image);
  pair.saliency = std::move(saliency);
  return pair;
}

SaliencyPair load_pair(const std::filesystem::path& image_path, const std::filesystem::path& saliency_path) {
  RasterImage image = read_png(image_path);
  SaliencyMap saliency = to_saliency(read_png(saliency_path));
  return make_pair(image_path.stem().string(), std::move(image), std::move(saliency));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("image") || !j.contains("saliency")) {
      throw FormatError("manifest line " + std::to_string(line_no) + " needs 'image' and 'saliency'");
    }
    ManifestEntry e;
    e.image = j["image"].get<std::string>();
    e.saliency = j["saliency"].get<std::string>();
    if (e.image.is_relative()) e.image = base / e.image;
    if (e.saliency.is_relative()) e.saliency = base / e.saliency;
    e.id = j.value("id", e.image.stem().string());
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw Error("IoError", "cannot write '" + path.string() + "'");
  for (const ManifestEntry& e : entries) {
    out << nlohmann::json{{"image", e.image.string()}, {"saliency", e.saliency.string()}, {"id", e.id}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------- watershed

SaliencyMap gaussian_blur(const SaliencyMap& map, double sigma) {
  if (sigma <= 0.0) return map;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= total;

  const int w = map.width, h = map.height;
  SaliencyMap tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * map.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = static_cast<float>(acc);
    }
  return out;
}

namespace {

constexpr std::array<std::array<int, 2>, 4> kNeighbors{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

}  // namespace

RegionSet watershed_segment(const SaliencyMap& saliency, const SegmentConfig& cfg) {
  const int w = saliency.width, h = saliency.height;
  const std::size_t n = saliency.data.size();
  const float peak = n ? *std::max_element(saliency.data.begin(), saliency.data.end()) : 0.0f;
  if (!(peak > 0.0f)) throw NoRegions("saliency map has no positive values");
  const float threshold = static_cast<float>(cfg.threshold_ratio) * peak;

  const SaliencyMap blurred = gaussian_blur(saliency, cfg.blur_sigma_fraction * std::min(w, h));
  std::vector<std::uint8_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = saliency.data[i] >= threshold && saliency.data[i] > 0.0f;

  // Regional maxima of the blurred map restricted to the active set.
  std::vector<int> label(n, 0);
  std::vector<std::uint8_t> visited(n, 0);
  int markers = 0;
  std::vector<int> plateau;
  for (std::size_t start = 0; start < n; ++start) {
    if (!active[start] || visited[start]) continue;
    const float v = blurred.data[start];
    plateau.clear();
    plateau.push_back(static_cast<int>(start));
    visited[start] = 1;
    bool is_max = true;
    for (std::size_t head = 0; head < plateau.size(); ++head) {
      const int p = plateau[head];
      const int px = p % w, py = p / w;
      for (const auto& d : kNeighbors) {
        const int qx = px + d[0], qy = py + d[1];
        if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
        const std::size_t q = static_cast<std::size_t>(qy) * w + qx;
        if (!active[q]) continue;
        if (blurred.data[q] > v) {
          is_max = false;
        } else if (blurred.data[q] == v && !visited[q]) {
          visited[q] = 1;
          plateau.push_back(static_cast<int>(q));
        }
      }
    }
    if (is_max) {
      ++markers;
      for (int p : plateau) label[static_cast<std::size_t>(p)] = markers;
    }
  }
  if (markers == 0) throw NoRegions("no saliency maxima above threshold");

  // Priority flood: highest blurred value first, FIFO among ties.
  using Item = std::tuple<float, std::int64_t, int, int>;  // value, -seq, pixel, label
  auto cmp = [](const Item& a, const Item& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  };
  std::priority_queue<Item, std::vector<Item>, decltype(cmp)> queue(cmp);
  std::vector<std::uint8_t> queued(n, 0);
  std::int64_t seq = 0;
  auto push_neighbors = [&](int p, int lab) {
    const int px = p % w, py = p / w;
    for (const auto& d : kNeighbors) {
      const int qx = px + d[0], qy = py + d[1];
      if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
      const std::size_t q = static_cast<std::size_t>(qy) * w + qx;
      if (!active[q] || label[q] != 0 || queued[q]) continue;
      queued[q] = 1;
      queue.emplace(blurred.data[q], -(seq++), static_cast<int>(q), lab);
    }
  };
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != 0) push_neighbors(static_cast<int>(p), label[p]);
  }
  while (!queue.empty()) {
    const auto [v, s, p, lab] = queue.top();
    queue.pop();
    if (label[static_cast<std::size_t>(p)] != 0) continue;
    label[static_cast<std::size_t>(p)] = lab;
    push_neighbors(p, lab);
  }

  // Collect regions.
  struct Acc {
    int area = 0;
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(markers) + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int lab = label[static_cast<std::size_t>(y) * w + x];
      if (!lab) continue;
      Acc& a = acc[static_cast<std::size_t>(lab)];
      ++a.area;
      a.x0 = std::min(a.x0, x);
      a.y0 = std::min(a.y0, y);
      a.x1 = std::max(a.x1, x + 1);
      a.y1 = std::max(a.y1, y + 1);
    }

  std::vector<Region> regions;
  for (int lab = 1; lab <= markers; ++lab) {
    const Acc& a = acc[static_cast<std::size_t>(lab)];
    if (a.area == 0) continue;
    Region r;
    r.id = lab;
    r.bbox = BBox{a.x0, a.y0, a.x1, a.y1};
    r.area = a.area;
    r.cx = 0.5 * (a.x0 + a.x1) / w;
    r.cy = 0.5 * (a.y0 + a.y1) / h;
    r.mask.assign(static_cast<std::size_t>(r.bbox.width()) * r.bbox.height(), 0);
    for (int y = a.y0; y < a.y1; ++y)
      for (int x = a.x0; x < a.x1; ++x)
        if (label[static_cast<std::size_t>(y) * w + x] == lab) {
          r.mask[static_cast<std::size_t>(y - a.y0) * r.bbox.width() + (x - a.x0)] = 1;
        }
    regions.push_back(std::move(r));
  }
  std::stable_sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.cy != b.cy) return a.cy < b.cy;
    return a.cx < b.cx;
  });
  if (static_cast<int>(regions.size()) > cfg.max_regions) regions.resize(static_cast<std::size_t>(cfg.max_regions));

  RegionSet out;
  out.width = w;
  out.height = h;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    regions[i].rank = static_cast<int>(i);
    regions[i].id = static_cast<int>(i);
  }
  out.regions = std::move(regions);
  return out;
}

RegionSet extract_patches(const SaliencyPair& pair, RegionSet regions) {
  for (Region& r : regions.regions) {
    RasterImage patch(r.bbox.width(), r.bbox.height(), 4);
    for (int y = 0; y < patch.height; ++y)
      for (int x = 0; x < patch.width; ++x) {
        for (int c = 0; c < 3; ++c) patch.at(x, y, c) = pair.image.at(r.bbox.x0 + x, r.bbox.y0 + y, c);
        patch.at(x, y, 3) = r.mask[static_cast<std::size_t>(y) * patch.width + x] ? 1.0f : 0.0f;
      }
    r.patch = std::move(patch);
  }
  return regions;
}

Rgb background_color(const SaliencyPair& pair, const RegionSet& regions) {
  const RasterImage& img = pair.image;
  std::vector<std::uint8_t> covered(img.pixel_count(), 0);
  for (const Region& r : regions.regions)
    for (int y = r.bbox.y0; y < r.bbox.y1; ++y)
      for (int x = r.bbox.x0; x < r.bbox.x1; ++x)
        if (r.contains(x, y)) covered[static_cast<std::size_t>(y) * img.width + x] = 1;

  std::array<double, 3> outside{0, 0, 0}, all{0, 0, 0};
  std::size_t n_out = 0;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = img.data[i * static_cast<std::size_t>(img.channels) + c];
      all[c] += v;
      if (!covered[i]) outside[c] += v;
    }
    if (!covered[i]) ++n_out;
  }
  Rgb out{};
  const double denom = n_out ? static_cast<double>(n_out) : static_cast<double>(img.pixel_count());
  const auto& src = n_out ? outside : all;
  for (std::size_t c = 0; c < 3; ++c) out[c] = static_cast<float>(src[c] / std::max(denom, 1.0));
  return out;
}

// ------------------------------------------------------------ raster helpers

RasterImage to_rgb(const RasterImage& image) {
  if (image.channels == 3) return image;
  RasterImage out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.pixel_count(); ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      out.data[i * 3 + c] = image.channels == 1 ? image.data[i] : image.data[i * static_cast<std::size_t>(image.channels) + c];
    }
  return out;
}

RasterImage resize_bilinear(const RasterImage& image, int width, int height) {
  RasterImage out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(v);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ay = v - y0;
    for (int x = 0; x < width; ++x) {
      const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(u);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double ax = u - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - ax) * image.at(x0, y0, c) + ax * image.at(x1, y0, c);
        const double bot = (1 - ax) * image.at(x0, y1, c) + ax * image.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>((1 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

void draw_box(RasterImage& image, const BBox& box, const Rgb& color, int thickness) {
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) {
      if (x < 0 || y < 0 || x >= image.width || y >= image.height) continue;
      const bool edge = x < box.x0 + thickness || x >= box.x1 - thickness || y < box.y0 + thickness ||
                        y >= box.y1 - thickness;
      if (!edge) continue;
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = color[static_cast<std::size_t>(c)];
      if (image.channels == 4) image.at(x, y, 3) = 1.0f;
    }
}

void fill_disc(RasterImage& image, double cx, double cy, double radius, const Rgb& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = color[static_cast<std::size_t>(c)];
      if (image.channels == 4) image.at(x, y, 3) = 1.0f;
    }
}

RasterImage contact_sheet(std::span<const RasterImage> images, int cell_height, const Rgb& background) {
  const int gap = 4;
  std::vector<RasterImage> scaled;
  int total_w = gap;
  for (const RasterImage& img : images) {
    const int w = std::max(1, static_cast<int>(std::lround(static_cast<double>(img.width) * cell_height / img.height)));
    scaled.push_back(resize_bilinear(to_rgb(img), w, cell_height));
    total_w += w + gap;
  }
  RasterImage sheet(total_w, cell_height + 2 * gap, 3);
  for (std::size_t i = 0; i < sheet.pixel_count(); ++i)
    for (std::size_t c = 0; c < 3; ++c) sheet.data[i * 3 + c] = background[c];
  int x_off = gap;
  for (const RasterImage& img : scaled) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) sheet.at(x_off + x, gap + y, c) = img.at(x, y, c);
    x_off += img.width + gap;
  }
  return sheet;
}

}  // namespace layoutmuse::imaging
