#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "layoutmuse/autodiff/gradcheck.hpp"
#include "layoutmuse/compositor.hpp"

using namespace layoutmuse;
using namespace layoutmuse::compositor;
using imaging::RasterImage;

namespace {

RasterImage solid_sprite(int w, int h, imaging::Rgb c, float alpha) {
  RasterImage s(w, h, 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) s.at(x, y, k) = c[static_cast<std::size_t>(k)];
      s.at(x, y, 3) = alpha;
    }
  return s;
}

RasterImage random_sprite(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> d(0, 1);
  RasterImage s(w, h, 4);
  for (float& v : s.data) v = d(rng);
  return s;
}

// Grid whose top cells are `cells` with values 0.9, 0.8, ... and everything
// else well below them.
layout::LayoutGrid grid_with(const std::vector<layout::Cell>& cells, std::mt19937_64* rng = nullptr) {
  layout::LayoutGrid g;
  std::uniform_real_distribution<float> d(0.0f, 0.3f);
  for (float& v : g.cells) v = rng ? d(*rng) : 0.0f;
  for (std::size_t i = 0; i < cells.size(); ++i) g.at(cells[i].row, cells[i].col) = 0.9f - 0.1f * static_cast<float>(i);
  return g;
}

ad::Tensor grid_tensor(const layout::LayoutGrid& g) {
  return ad::Tensor({32, 32}, std::vector<float>(g.cells.begin(), g.cells.end()));
}

float pixel(const RasterImage& img, int x, int y, int c) { return img.at(x, y, c); }

}  // namespace

TEST_CASE("opaque sprite with unit weight averages with the background") {
  SpriteSet set{{{solid_sprite(4, 4, {1, 0, 0}, 1), 1.0, 0}}, 32, 32, {0, 0, 1}};
  layout::LayoutGrid g;
  g.at(16, 16) = 1.0f;
  const CompositeImage out = soft_composite(set, g, 1);
  REQUIRE(out.anchors.size() == 1);
  // Cell (16, 16) centers at (16.5, 16.5): the sprite covers x, y in 15..18.
  for (int y = 15; y < 18; ++y)
    for (int x = 15; x < 18; ++x) {
      CHECK(pixel(out.image, x, y, 0) == doctest::Approx(0.5));
      CHECK(pixel(out.image, x, y, 2) == doctest::Approx(0.5));
    }
  for (auto [x, y] : {std::pair{0, 0}, {10, 16}, {31, 31}, {16, 22}}) {
    CHECK(pixel(out.image, x, y, 0) == 0.0f);
    CHECK(pixel(out.image, x, y, 2) == 1.0f);
  }
}

TEST_CASE("zero alpha leaves pure background") {
  std::mt19937_64 rng(1);
  RasterImage s = random_sprite(7, 5, rng);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) s.at(x, y, 3) = 0.0f;
  SpriteSet set{{{s, 1.5, 0}, {s, 1.0, 1}}, 40, 24, {0.2f, 0.4f, 0.6f}};
  const CompositeImage out = soft_composite(set, grid_with({{3, 4}, {20, 20}}), 2);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 40; ++x)
      for (int c = 0; c < 3; ++c) CHECK(pixel(out.image, x, y, c) == doctest::Approx(set.background[static_cast<std::size_t>(c)]));
}

TEST_CASE("integer-aligned sprite reproduces source pixels") {
  // Odd sprite on a 32x32 canvas: the sprite's pixel centers land on canvas
  // pixel centers, so sampling is an exact copy. Alpha 1, weight 1 gives
  // (c + bg) / 2 with bg = 0, i.e. c / 2.
  std::mt19937_64 rng(2);
  RasterImage s = random_sprite(5, 3, rng);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) s.at(x, y, 3) = 1.0f;
  SpriteSet set{{{s, 1.0, 0}}, 32, 32, {0, 0, 0}};
  layout::LayoutGrid g;
  g.at(8, 12) = 1.0f;
  const CompositeImage out = soft_composite(set, g, 1);
  // Center (12.5, 8.5): sprite x 0..4 -> canvas 10..14, y 0..2 -> 7..9.
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) CHECK(pixel(out.image, 10 + x, 7 + y, c) == doctest::Approx(s.at(x, y, c) / 2).epsilon(1e-6));
  CHECK(pixel(out.image, 9, 8, 0) == 0.0f);
  CHECK(pixel(out.image, 15, 8, 0) == 0.0f);
}

TEST_CASE("cardinality and shape errors") {
  SpriteSet set{{{solid_sprite(2, 2, {1, 1, 1}, 1), 1.0, 0}}, 16, 16, {0, 0, 0}};
  layout::LayoutGrid g;
  CHECK_THROWS_AS(soft_composite(set, g, 2), CardinalityMismatch);
  CHECK_THROWS_AS(hard_composite(set, {}), CardinalityMismatch);
  ad::Tape tape;
  CHECK_THROWS_AS(soft_composite(tape, set, tape.input(ad::Tensor({16, 16})), 1), ShapeMismatch);
  set.sprites[0].scale = 0.0;
  CHECK_THROWS_AS(soft_composite(set, g, 1), InvalidArgument);
}

TEST_CASE("property: gradients match finite differences on 16x16 canvases") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_int_distribution<int> cell(0, 31), side(2, 6);
    std::uniform_real_distribution<double> scale(0.6, 1.8);
    SpriteSet set;
    set.width = set.height = 16;
    set.background = {0.3f, 0.5f, 0.7f};
    std::vector<layout::Cell> cells;
    const int n = 1 + trial % 3;
    for (int i = 0; i < n; ++i) {
      set.sprites.push_back({random_sprite(side(rng), side(rng), rng), scale(rng), i});
      layout::Cell c{cell(rng), cell(rng)};
      while (std::find(cells.begin(), cells.end(), c) != cells.end()) c = {cell(rng), cell(rng)};
      cells.push_back(c);
    }
    const layout::LayoutGrid g = grid_with(cells, &rng);

    const ad::GradFn<float> wrt_grid = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      return soft_composite(tape, set, in[0], n).image;
    };
    const auto rg = ad::gradcheck<float>(wrt_grid, {grid_tensor(g)}, 1e-2, 1e-3, 10 + trial);
    CHECK_MESSAGE(rg.ok, rg.detail);

    std::vector<ad::Tensor> sprites;
    for (const Sprite& s : set.sprites) sprites.push_back(sprite_tensor(s.rgba));
    const ad::GradFn<float> wrt_sprites = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      return soft_composite(tape, set, tape.constant(grid_tensor(g)), n, in).image;
    };
    const auto rs = ad::gradcheck<float>(wrt_sprites, sprites, 1e-2, 1e-3, 20 + trial);
    CHECK_MESSAGE(rs.ok, rs.detail);
  }
}

TEST_CASE("property: output stays in [0, 1]") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    SpriteSet set;
    set.width = 48;
    set.height = 32;
    set.background = {u(rng), u(rng), u(rng)};
    const int n = 1 + trial % 13;
    for (int i = 0; i < n; ++i) set.sprites.push_back({random_sprite(9, 7, rng), 1.0 + u(rng), i});
    layout::LayoutGrid g;
    for (float& v : g.cells) v = u(rng);
    ad::Tape tape;
    const SoftResult r = soft_composite(tape, set, tape.constant(grid_tensor(g)), n);
    for (float v : r.image.value().data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f + 1e-6f);
    }
  }
}

TEST_CASE("property: sprite permutation with matching anchors is order-independent") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  std::uniform_int_distribution<int> cell(0, 31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 5;
    SpriteSet set{{}, 24, 24, {0.1f, 0.2f, 0.3f}};
    layout::AnchorSet anchors;
    for (int i = 0; i < n; ++i) {
      set.sprites.push_back({random_sprite(5, 7, rng), 0.8 + u(rng), i});
      anchors.push_back({cell(rng), cell(rng), 1.0});
    }
    layout::LayoutGrid g;
    for (float& v : g.cells) v = u(rng);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    SpriteSet pset = set;
    layout::AnchorSet panchors = anchors;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      pset.sprites[i] = set.sprites[static_cast<std::size_t>(perm[i])];
      panchors[i] = anchors[static_cast<std::size_t>(perm[i])];
    }
    ad::Tape tape;
    const ad::Var grid = tape.constant(grid_tensor(g));
    const ad::Tensor a = soft_composite_at(tape, set, grid, anchors).value();
    const ad::Tensor b = soft_composite_at(tape, pset, grid, panchors).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
  }
}

TEST_CASE("pyramid levels") {
  ad::Tape tape;
  const ad::Var c = tape.constant(ad::Tensor({1, 3, 128, 128}, 0.37f));
  const std::vector<ad::Var> levels = pyramid(c, 3);
  REQUIRE(levels.size() == 3);
  int side = 64;
  for (const ad::Var& l : levels) {
    CHECK(l.shape() == ad::Shape{1, 3, side, side});
    for (float v : l.value().data()) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    side /= 2;
  }
  CHECK_THROWS_AS(pyramid(tape.constant(ad::Tensor({1, 1, 12, 12})), 3), ShapeMismatch);
  CHECK_THROWS_AS(pyramid(c, 0), InvalidArgument);
}

TEST_CASE("pyramid impulse gives the binomial footprint") {
  ad::Tensor img({1, 1, 16, 16});
  img[8 * 16 + 8] = 1.0f;
  ad::Tape tape;
  const ad::Tensor l1 = pyramid(tape.constant(img), 1)[0].value();
  REQUIRE(l1.shape() == ad::Shape{1, 1, 8, 8});
  // Output (i, j) samples input (2i, 2j) of the blurred map, so only rows and
  // columns 3..5 see the impulse, with taps 1/16, 6/16, 1/16 per axis.
  const double k[3] = {1.0 / 16, 6.0 / 16, 1.0 / 16};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const bool inside = i >= 3 && i <= 5 && j >= 3 && j <= 5;
      const double expected = inside ? k[i - 3] * k[j - 3] : 0.0;
      CHECK(l1[static_cast<std::size_t>(i) * 8 + j] == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("hard composite order and agreement with the soft merge") {
  SpriteSet set{{{solid_sprite(5, 5, {1, 0, 0}, 1), 1.0, 0}, {solid_sprite(5, 5, {0, 1, 0}, 1), 1.0, 1}}, 32, 32, {0, 0, 0}};
  // Overlapping (x 14..18 and 16..20): the more important sprite ends on top.
  const CompositeImage over = hard_composite(set, {{16, 16, 1}, {16, 18, 1}});
  CHECK(pixel(over.image, 16, 16, 0) == 1.0f);
  CHECK(pixel(over.image, 16, 16, 1) == 0.0f);
  CHECK(pixel(over.image, 19, 16, 1) == 1.0f);

  // Disjoint sprites (integer aligned, alpha 0 or 1): soft gives
  // w c / (1 + w) on a black background where hard gives c.
  const layout::AnchorSet anchors = {{4, 4, 1}, {24, 24, 1}};
  const CompositeImage hard = hard_composite(set, anchors);
  layout::LayoutGrid g;
  g.at(4, 4) = 1.0f;
  g.at(24, 24) = 0.999f;
  SpriteSet unit = set;
  const CompositeImage soft = soft_composite(unit, g, 2);
  CHECK(soft.anchors == anchors);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool second = x >= 22 && x < 27 && y >= 22 && y < 27;
      for (int c = 0; c < 3; ++c) {
        const double h = pixel(hard.image, x, y, c);
        const double expect = second ? h * 0.999 / 1.999 : h / 2;
        CHECK(pixel(soft.image, x, y, c) == doctest::Approx(expect).epsilon(1e-5));
      }
    }
}

TEST_CASE("sprites_from_regions rescales patches to the canvas") {
  imaging::RegionSet rs;
  rs.width = 256;
  rs.height = 128;
  imaging::Region r;
  r.patch = solid_sprite(20, 10, {1, 1, 1}, 1);
  r.rank = 0;
  rs.regions.push_back(r);
  const SpriteSet set = sprites_from_regions(rs, {0, 0, 0}, 128, 128);
  CHECK(set.sprites[0].rgba.width == 10);
  CHECK(set.sprites[0].rgba.height == 10);
  CHECK(set.width == 128);
}
