#pragma once

#include <span>
#include <vector>

#include "layoutmuse/autodiff/ops.hpp"
#include "layoutmuse/imaging.hpp"
#include "layoutmuse/layout_codec.hpp"

namespace layoutmuse::compositor {

struct Sprite {
  imaging::RasterImage rgba;  // 4 channels, straight alpha
  double scale = 1.0;
  int rank = 0;
};

/// Sprites in importance order on a canvas of the given size.
struct SpriteSet {
  std::vector<Sprite> sprites;
  int width = 0;
  int height = 0;
  imaging::Rgb background{};
};

struct CompositeImage {
  imaging::RasterImage image;  // RGB
  layout::AnchorSet anchors;
};

/// Sprites for a canvas of out_w x out_h: each region patch is resized by
/// the canvas-to-drawing ratio so anchors address the same relative spots.
SpriteSet sprites_from_regions(const imaging::RegionSet& regions, const imaging::Rgb& background, int out_w, int out_h);

/// Anchor cell center in canvas pixels.
std::pair<double, double> anchor_center(const layout::Anchor& a, int width, int height);

/// (1, 4, h, w) tensor of a sprite: premultiplied RGB then alpha.
ad::Tensor sprite_tensor(const imaging::RasterImage& rgba);
ad::Tensor image_tensor(const imaging::RasterImage& rgb);  // (1, 3, h, w)
imaging::RasterImage tensor_image(const ad::Tensor& t, int item = 0);  // from (b, 3, h, w)

struct SoftResult {
  ad::Var image;  // (1, 3, height, width)
  layout::AnchorSet anchors;
};

/// Places sprite i at the i-th largest grid cell and merges per pixel
///   (sum_i w_i a_i c_i + background) / (sum_i w_i a_i + 1)
/// with w_i the grid value at that cell. Positions are chosen on values
/// (straight-through); gradients reach the grid through w_i and the sprite
/// pixels through the bilinear weights. `grid` has 1024 elements.
/// `sprite_vars` optionally supplies (1, 4, h, w) premultiplied sprite
/// tensors as tape variables; otherwise they enter as constants.
SoftResult soft_composite(ad::Tape& tape, const SpriteSet& set, const ad::Var& grid, int n,
                          std::span<const ad::Var> sprite_vars = {});
CompositeImage soft_composite(const SpriteSet& set, const layout::LayoutGrid& grid, int n);

/// Soft merge with sprite i at anchors[i], weighted by the grid value there.
ad::Var soft_composite_at(ad::Tape& tape, const SpriteSet& set, const ad::Var& grid, const layout::AnchorSet& anchors,
                          std::span<const ad::Var> sprite_vars = {});

/// Batched soft composite: grids (b, 1, 32, 32), one sprite set per item, all
/// on the same canvas. Returns (b, 3, H, W).
ad::Var soft_composite_batch(ad::Tape& tape, std::span<const SpriteSet* const> sets, const ad::Var& grids);

/// Painter's algorithm, least important first, alpha-over; for previews.
CompositeImage hard_composite(const SpriteSet& set, const layout::AnchorSet& anchors);

/// Blur-and-decimate levels of an (N, C, H, W) image, excluding the input.
std::vector<ad::Var> pyramid(const ad::Var& image, int levels);

}  // namespace layoutmuse::compositor
