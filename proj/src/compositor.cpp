#include "layoutmuse/compositor.hpp"

#include <algorithm>
#include <cmath>

namespace layoutmuse::compositor {

namespace {

// Output pixel (x, y) reads the sprite at continuous coordinate (u, v) in the
// bilinear_map convention (pixel k covers [k, k+1)).
struct Placement {
  double cx, cy, scale;
  int sw, sh;
  double u(int x) const { return (x + 0.5 - cx) / scale + sw / 2.0; }
  double v(int y) const { return (y + 0.5 - cy) / scale + sh / 2.0; }
  // Canvas pixel range touched by the sprite footprint (plus one for the taps).
  int x0() const { return static_cast<int>(std::floor(cx - (sw / 2.0 + 1) * scale)); }
  int x1() const { return static_cast<int>(std::ceil(cx + (sw / 2.0 + 1) * scale)); }
  int y0() const { return static_cast<int>(std::floor(cy - (sh / 2.0 + 1) * scale)); }
  int y1() const { return static_cast<int>(std::ceil(cy + (sh / 2.0 + 1) * scale)); }
};

void check_cardinality(const SpriteSet& set, std::size_t n) {
  if (set.sprites.size() != n) {
    throw CardinalityMismatch(std::to_string(set.sprites.size()) + " sprites for " + std::to_string(n) + " anchors");
  }
  if (n == 0) throw CardinalityMismatch("composite needs at least one sprite");
}

Placement place(const Sprite& s, const layout::Anchor& a, int width, int height) {
  if (!(s.scale > 0.0)) throw InvalidArgument("sprite scale must be positive");
  const auto [cx, cy] = anchor_center(a, width, height);
  return {cx, cy, s.scale * a.scale, s.rgba.width, s.rgba.height};
}

}  // namespace

std::pair<double, double> anchor_center(const layout::Anchor& a, int width, int height) {
  return {(a.col + 0.5) / layout::kGridSize * width, (a.row + 0.5) / layout::kGridSize * height};
}

SpriteSet sprites_from_regions(const imaging::RegionSet& regions, const imaging::Rgb& background, int out_w, int out_h) {
  SpriteSet set;
  set.width = out_w;
  set.height = out_h;
  set.background = background;
  const double sx = static_cast<double>(out_w) / regions.width;
  const double sy = static_cast<double>(out_h) / regions.height;
  for (const imaging::Region& r : regions.regions) {
    if (r.patch.width == 0) throw InvalidArgument("region " + std::to_string(r.id) + " has no patch");
    const int w = std::max(1, static_cast<int>(std::lround(r.patch.width * sx)));
    const int h = std::max(1, static_cast<int>(std::lround(r.patch.height * sy)));
    Sprite s;
    s.rgba = (w == r.patch.width && h == r.patch.height) ? r.patch : imaging::resize_bilinear(r.patch, w, h);
    s.rank = r.rank;
    set.sprites.push_back(std::move(s));
  }
  return set;
}

ad::Tensor sprite_tensor(const imaging::RasterImage& rgba) {
  if (rgba.channels != 4) throw ShapeMismatch("sprites need RGBA rasters");
  const int h = rgba.height, w = rgba.width;
  ad::Tensor t({1, 4, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float a = rgba.at(x, y, 3);
      for (int c = 0; c < 3; ++c) t[static_cast<std::size_t>(c) * plane + i] = rgba.at(x, y, c) * a;
      t[3 * plane + i] = a;
    }
  return t;
}

ad::Tensor image_tensor(const imaging::RasterImage& rgb) {
  const int h = rgb.height, w = rgb.width;
  ad::Tensor t({1, 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) t[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] = rgb.at(x, y, c);
  return t;
}

imaging::RasterImage tensor_image(const ad::Tensor& t, int item) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeMismatch("expected (b, 3, h, w), got " + ad::shape_str(t.shape()));
  const int h = t.dim(2), w = t.dim(3);
  imaging::RasterImage img(w, h, 3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t base = static_cast<std::size_t>(item) * 3 * plane;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = std::clamp(t[base + static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x], 0.0f, 1.0f);
  return img;
}

SoftResult soft_composite(ad::Tape& tape, const SpriteSet& set, const ad::Var& grid, int n,
                          std::span<const ad::Var> sprite_vars) {
  check_cardinality(set, static_cast<std::size_t>(n));
  if (grid.value().size() != static_cast<std::size_t>(layout::kGridCells)) {
    throw ShapeMismatch("soft_composite needs a 32x32 grid, got " + ad::shape_str(grid.shape()));
  }
  layout::LayoutGrid values;
  std::copy_n(grid.value().ptr(), layout::kGridCells, values.cells.begin());
  SoftResult out;
  out.anchors = layout::decode_top_n(values, n);
  out.image = soft_composite_at(tape, set, grid, out.anchors, sprite_vars);
  return out;
}

ad::Var soft_composite_at(ad::Tape& tape, const SpriteSet& set, const ad::Var& grid, const layout::AnchorSet& anchors,
                          std::span<const ad::Var> sprite_vars) {
  check_cardinality(set, anchors.size());
  if (grid.value().size() != static_cast<std::size_t>(layout::kGridCells)) {
    throw ShapeMismatch("soft_composite needs a 32x32 grid, got " + ad::shape_str(grid.shape()));
  }
  if (!sprite_vars.empty() && sprite_vars.size() != set.sprites.size()) {
    throw CardinalityMismatch("one sprite variable per sprite required");
  }
  const int W = set.width, H = set.height;
  const ad::Var flat = ad::reshape(grid, {layout::kGridCells});
  ad::Tensor bg({1, 3, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < 3; ++c) std::fill_n(bg.ptr() + c * plane, plane, set.background[static_cast<std::size_t>(c)]);
  ad::Var numerator = tape.constant(std::move(bg));
  ad::Var denominator = tape.constant(ad::Tensor({1, 1, H, W}, 1.0f));

  std::vector<double> us(plane), vs(plane);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Sprite& sprite = set.sprites[i];
    const layout::Anchor& anchor = anchors[i];
    if (anchor.row < 0 || anchor.row >= layout::kGridSize || anchor.col < 0 || anchor.col >= layout::kGridSize) {
      throw AnchorOutOfRange("anchor outside the 32x32 grid");
    }
    const Placement p = place(sprite, anchor, W, H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        us[static_cast<std::size_t>(y) * W + x] = p.u(x);
        vs[static_cast<std::size_t>(y) * W + x] = p.v(y);
      }
    const ad::Var src = sprite_vars.empty() ? tape.constant(sprite_tensor(sprite.rgba)) : sprite_vars[i];
    const ad::Var sampled = ad::bilinear_sample(src, H, W, us, vs);
    const ad::Var weight = ad::gather(flat, {anchor.row * layout::kGridSize + anchor.col});
    const ad::Var premult = ad::mul_scalar(ad::slice(sampled, 1, 0, 3), weight);
    const ad::Var alpha = ad::mul_scalar(ad::slice(sampled, 1, 3, 1), weight);
    numerator = ad::add(numerator, premult);
    denominator = ad::add(denominator, alpha);
  }
  std::array<ad::Var, 3> rep{denominator, denominator, denominator};
  return ad::div(numerator, ad::concat<float>(rep, 1));
}

CompositeImage soft_composite(const SpriteSet& set, const layout::LayoutGrid& grid, int n) {
  ad::Tape tape;
  const ad::Var g = tape.constant(ad::Tensor({layout::kGridSize, layout::kGridSize},
                                             std::vector<float>(grid.cells.begin(), grid.cells.end())));
  SoftResult r = soft_composite(tape, set, g, n);
  return {tensor_image(r.image.value()), std::move(r.anchors)};
}

ad::Var soft_composite_batch(ad::Tape& tape, std::span<const SpriteSet* const> sets, const ad::Var& grids) {
  const int b = static_cast<int>(sets.size());
  if (grids.shape() != ad::Shape{b, 1, layout::kGridSize, layout::kGridSize}) {
    throw ShapeMismatch("soft_composite_batch expects (" + std::to_string(b) + ", 1, 32, 32), got " + ad::shape_str(grids.shape()));
  }
  std::vector<ad::Var> items;
  for (int i = 0; i < b; ++i) {
    const SpriteSet& set = *sets[static_cast<std::size_t>(i)];
    const ad::Var g = ad::slice(grids, 0, i, 1);
    items.push_back(soft_composite(tape, set, g, static_cast<int>(set.sprites.size())).image);
  }
  return ad::concat<float>(items, 0);
}

CompositeImage hard_composite(const SpriteSet& set, const layout::AnchorSet& anchors) {
  check_cardinality(set, anchors.size());
  const int W = set.width, H = set.height;
  imaging::RasterImage img(W, H, 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = set.background[static_cast<std::size_t>(c)];

  for (int i = static_cast<int>(anchors.size()) - 1; i >= 0; --i) {
    const Sprite& sprite = set.sprites[static_cast<std::size_t>(i)];
    const Placement p = place(sprite, anchors[static_cast<std::size_t>(i)], W, H);
    const imaging::RasterImage& s = sprite.rgba;
    for (int y = std::max(0, p.y0()); y < std::min(H, p.y1()); ++y)
      for (int x = std::max(0, p.x0()); x < std::min(W, p.x1()); ++x) {
        // Premultiplied bilinear sample, zero outside the sprite.
        const double u = p.u(x) - 0.5, v = p.v(y) - 0.5;
        const int sx = static_cast<int>(std::floor(u)), sy = static_cast<int>(std::floor(v));
        const double ax = u - sx, ay = v - sy;
        double acc[4] = {0, 0, 0, 0};
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int px = sx + dx, py = sy + dy;
            if (px < 0 || py < 0 || px >= s.width || py >= s.height) continue;
            const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
            const double a = s.at(px, py, 3);
            for (int c = 0; c < 3; ++c) acc[c] += wgt * a * s.at(px, py, c);
            acc[3] += wgt * a;
          }
        if (acc[3] <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          img.at(x, y, c) = static_cast<float>(std::clamp(acc[c] + (1.0 - acc[3]) * img.at(x, y, c), 0.0, 1.0));
        }
      }
  }
  return {std::move(img), anchors};
}

std::vector<ad::Var> pyramid(const ad::Var& image, int levels) {
  if (levels < 1) throw InvalidArgument("pyramid needs at least one level");
  if (image.shape().size() != 4) throw ShapeMismatch("pyramid expects (N, C, H, W)");
  const int h = image.shape()[2], w = image.shape()[3];
  const int div = 1 << levels;
  if (h % div || w % div) {
    throw ShapeMismatch("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by 2^" + std::to_string(levels));
  }
  std::vector<ad::Var> out;
  ad::Var cur = image;
  for (int l = 0; l < levels; ++l) {
    cur = ad::blur_downsample(cur);
    out.push_back(cur);
  }
  return out;
}

}  // namespace layoutmuse::compositor
