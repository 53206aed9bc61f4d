#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "layoutmuse/imaging.hpp"

using namespace layoutmuse;
using namespace layoutmuse::imaging;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("lm_imaging_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SaliencyMap blobs(int w, int h, std::initializer_list<std::array<double, 3>> centers_sigma) {
  SaliencyMap m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& c : centers_sigma) {
        const double dx = (x + 0.5) / w - c[0];
        const double dy = (y + 0.5) / h - c[1];
        v = std::max(v, std::exp(-(dx * dx + dy * dy) / (2 * c[2] * c[2])));
      }
      m.at(x, y) = static_cast<float>(v);
    }
  return m;
}

RasterImage random_image(int w, int h, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  RasterImage img(w, h, 3);
  for (float& v : img.data) v = static_cast<float>(d(rng)) / 255.0f;
  return img;
}

Region full_region(int w, int h) {
  Region r;
  r.bbox = {0, 0, w, h};
  r.mask.assign(static_cast<std::size_t>(w) * h, 1);
  r.area = w * h;
  r.cx = 0.5;
  r.cy = 0.5;
  return r;
}

}  // namespace

TEST_CASE("load_pair accepts matching sizes and rejects mismatched ones") {
  const fs::path dir = scratch_dir("load");
  write_png(dir / "a.png", random_image(64, 64, 1));
  write_png(dir / "s64.png", saliency_to_image(blobs(64, 64, {{{0.5, 0.5, 0.1}}})));
  write_png(dir / "s32.png", saliency_to_image(blobs(32, 32, {{{0.5, 0.5, 0.1}}})));

  const SaliencyPair pair = load_pair(dir / "a.png", dir / "s64.png");
  CHECK(pair.image.width == 64);
  CHECK(pair.image.height == 64);
  CHECK(pair.saliency.width == 64);
  CHECK_THROWS_AS(load_pair(dir / "a.png", dir / "s32.png"), DimensionMismatch);
  CHECK_THROWS_AS(load_pair(dir / "missing.png", dir / "s64.png"), DecodeError);
}

TEST_CASE("dim saliency is normalized by its observed maximum") {
  const fs::path dir = scratch_dir("dim");
  write_png(dir / "a.png", random_image(16, 16, 2));
  RasterImage gray(16, 16, 3, 0.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) gray.at(x, y, c) = (x == 3 && y == 4) ? 200.0f / 255.0f : 100.0f / 255.0f;
  write_png(dir / "s.png", gray);
  const SaliencyPair pair = load_pair(dir / "a.png", dir / "s.png");
  CHECK(pair.saliency.at(3, 4) == doctest::Approx(1.0));
  CHECK(pair.saliency.at(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("png round trip keeps 8-bit values") {
  const RasterImage img = random_image(13, 7, 3);
  const RasterImage back = decode_png(encode_png(img));
  REQUIRE(back.width == 13);
  REQUIRE(back.height == 7);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4};
  CHECK_THROWS_AS(decode_png(junk), DecodeError);
}

TEST_CASE("manifest round trip resolves relative paths") {
  const fs::path dir = scratch_dir("manifest");
  std::vector<ManifestEntry> entries = {{"a", "a.png", "a_sal.png"}, {"b", dir / "b.png", dir / "b_sal.png"}};
  write_manifest(dir / "m.jsonl", entries);
  const auto back = read_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].image == dir / "a.png");
  CHECK(back[1].saliency == dir / "b_sal.png");
}

TEST_CASE("single centered blob gives one centered region") {
  const SaliencyMap m = blobs(65, 65, {{{0.5, 0.5, 0.12}}});
  const RegionSet rs = watershed_segment(m);
  REQUIRE(rs.size() == 1);
  CHECK(std::abs(rs.regions[0].cx - 0.5) * 65 <= 1.0);
  CHECK(std::abs(rs.regions[0].cy - 0.5) * 65 <= 1.0);
  CHECK(rs.regions[0].rank == 0);
}

TEST_CASE("two separated blobs rank the larger first") {
  const SaliencyMap m = blobs(128, 64, {{{0.25, 0.5, 0.05}}, {{0.75, 0.5, 0.09}}});
  const RegionSet rs = watershed_segment(m);
  REQUIRE(rs.size() == 2);
  CHECK(rs.regions[0].area > rs.regions[1].area);
  CHECK(rs.regions[0].cx == doctest::Approx(0.75).epsilon(0.03));
  CHECK(rs.regions[1].cx == doctest::Approx(0.25).epsilon(0.03));
}

TEST_CASE("all-zero map has no regions") {
  CHECK_THROWS_AS(watershed_segment(SaliencyMap(32, 32, 0.0f)), NoRegions);
}

TEST_CASE("property: watershed invariants on random blob fields") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> pos(0.05, 0.95);
  std::uniform_real_distribution<double> sig(0.02, 0.08);
  for (int trial = 0; trial < 12; ++trial) {
    SaliencyMap m(96, 80);
    const int k = 3 + trial * 2;  // up to 25 blobs, beyond the region cap
    for (int b = 0; b < k; ++b) {
      const double cx = pos(rng), cy = pos(rng), s = sig(rng);
      std::uniform_real_distribution<double> amp(0.6, 1.0);
      const double a = amp(rng);
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
          const double dx = (x + 0.5) / m.width - cx, dy = (y + 0.5) / m.height - cy;
          m.at(x, y) = std::max(m.at(x, y), static_cast<float>(a * std::exp(-(dx * dx + dy * dy) / (2 * s * s))));
        }
    }
    const RegionSet rs = watershed_segment(m);
    const RegionSet again = watershed_segment(m);
    REQUIRE(rs.size() >= 1);
    CHECK(rs.size() <= 13);
    REQUIRE(again.size() == rs.size());

    float mx = 0.0f;
    for (float v : m.data) mx = std::max(mx, v);
    std::vector<int> owner(m.data.size(), -1);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const Region& r = rs.regions[i];
      CHECK(r.rank == static_cast<int>(i));
      CHECK(r.mask == again.regions[i].mask);
      CHECK(r.bbox.x0 == again.regions[i].bbox.x0);
      if (i > 0) {
        const Region& p = rs.regions[i - 1];
        const bool ordered = p.area > r.area || (p.area == r.area && std::pair(p.cy, p.cx) < std::pair(r.cy, r.cx));
        CHECK(ordered);
      }
      int area = 0;
      for (int y = r.bbox.y0; y < r.bbox.y1; ++y)
        for (int x = r.bbox.x0; x < r.bbox.x1; ++x) {
          if (!r.contains(x, y)) continue;
          ++area;
          const std::size_t idx = static_cast<std::size_t>(y) * m.width + x;
          CHECK(m.data[idx] >= 0.5f * mx);
          CHECK(owner[idx] == -1);
          owner[idx] = static_cast<int>(i);
        }
      CHECK(area == r.area);
      CHECK(r.area > 0);
      const double px = r.cx * m.width, py = r.cy * m.height;
      CHECK(px >= r.bbox.x0);
      CHECK(px <= r.bbox.x1);
      CHECK(py >= r.bbox.y0);
      CHECK(py <= r.bbox.y1);
    }
  }
}

TEST_CASE("extract_patches: full canvas, single pixel, half mask") {
  const RasterImage img = random_image(8, 6, 5);
  SaliencyPair pair = make_pair("p", img, SaliencyMap(8, 6, 1.0f));

  RegionSet full;
  full.width = 8;
  full.height = 6;
  full.regions.push_back(full_region(8, 6));
  const RegionSet a = extract_patches(pair, full);
  const RasterImage& pa = a.regions[0].patch;
  REQUIRE(pa.channels == 4);
  REQUIRE(pa.width == 8);
  REQUIRE(pa.height == 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) CHECK(pa.at(x, y, c) == img.at(x, y, c));
      CHECK(pa.at(x, y, 3) == 1.0f);
    }

  RegionSet single = full;
  single.regions[0].bbox = {5, 2, 6, 3};
  single.regions[0].mask = {1};
  single.regions[0].area = 1;
  const RegionSet sb = extract_patches(pair, single);
  const RasterImage& pb = sb.regions[0].patch;
  REQUIRE(pb.width == 1);
  REQUIRE(pb.height == 1);
  for (int c = 0; c < 3; ++c) CHECK(pb.at(0, 0, c) == img.at(5, 2, c));
  CHECK(pb.at(0, 0, 3) == 1.0f);

  RegionSet half = full;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) half.regions[0].mask[static_cast<std::size_t>(y * 8 + x)] = (x + y) % 2;
  const RegionSet sc = extract_patches(pair, half);
  const RasterImage& pc = sc.regions[0].patch;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(pc.at(x, y, 3) == static_cast<float>((x + y) % 2));
}

TEST_CASE("background_color cases") {
  SaliencyPair gray = make_pair("g", RasterImage(10, 10, 3, 0.5f), SaliencyMap(10, 10, 1.0f));
  RegionSet some;
  some.width = some.height = 10;
  Region r = full_region(4, 4);
  some.regions.push_back(r);
  const Rgb g = background_color(gray, some);
  for (float v : g) CHECK(v == doctest::Approx(0.5f));

  RasterImage split(10, 10, 3, 0.0f);
  for (int y = 0; y < 10; ++y)
    for (int x = 5; x < 10; ++x)
      for (int c = 0; c < 3; ++c) split.at(x, y, c) = 1.0f;
  SaliencyPair sp = make_pair("s", split, SaliencyMap(10, 10, 1.0f));
  RegionSet right;
  right.width = right.height = 10;
  Region rr;
  rr.bbox = {5, 0, 10, 10};
  rr.mask.assign(50, 1);
  rr.area = 50;
  right.regions.push_back(rr);
  const Rgb black = background_color(sp, right);
  for (float v : black) CHECK(v == 0.0f);

  RegionSet all;
  all.width = all.height = 10;
  all.regions.push_back(full_region(10, 10));
  const Rgb mean = background_color(sp, all);
  for (float v : mean) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("segment then patch on a real pair keeps colors inside masks") {
  const RasterImage img = random_image(64, 48, 9);
  SaliencyPair pair = make_pair("r", img, blobs(64, 48, {{{0.3, 0.4, 0.08}}, {{0.7, 0.6, 0.06}}}));
  const RegionSet rs = extract_patches(pair, watershed_segment(pair.saliency));
  for (const Region& r : rs.regions)
    for (int y = r.bbox.y0; y < r.bbox.y1; ++y)
      for (int x = r.bbox.x0; x < r.bbox.x1; ++x) {
        const int px = x - r.bbox.x0, py = y - r.bbox.y0;
        CHECK(r.patch.at(px, py, 3) == (r.contains(x, y) ? 1.0f : 0.0f));
        if (r.contains(x, y))
          for (int c = 0; c < 3; ++c) CHECK(r.patch.at(px, py, c) == img.at(x, y, c));
      }
}
