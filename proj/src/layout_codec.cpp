#include "layoutmuse/layout_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace layoutmuse::layout {

double importance(int rank) { return std::exp(-0.1 * rank); }

Cell quantize_center(double cx, double cy) {
  auto q = [](double v) { return std::clamp(static_cast<int>(std::floor(v * kGridSize)), 0, kGridSize - 1); };
  return {q(cy), q(cx)};
}

std::vector<Cell> encoded_cells(const imaging::RegionSet& regions) {
  std::array<bool, kGridCells> taken{};
  std::vector<Cell> out;
  out.reserve(regions.size());
  for (const imaging::Region& r : regions.regions) {
    Cell want = quantize_center(r.cx, r.cy);
    if (taken[static_cast<std::size_t>(want.row * kGridSize + want.col)]) {
      // Ring search: every cell at Manhattan distance d, visited row-major.
      bool found = false;
      for (int d = 1; d < 2 * kGridSize && !found; ++d) {
        for (int row = std::max(0, want.row - d); row <= std::min(kGridSize - 1, want.row + d) && !found; ++row) {
          const int rest = d - std::abs(row - want.row);
          for (int col : {want.col - rest, want.col + rest}) {
            if (col < 0 || col >= kGridSize) continue;
            if (!taken[static_cast<std::size_t>(row * kGridSize + col)]) {
              want = {row, col};
              found = true;
              break;
            }
          }
        }
      }
    }
    taken[static_cast<std::size_t>(want.row * kGridSize + want.col)] = true;
    out.push_back(want);
  }
  return out;
}

LayoutGrid encode_ground_truth(const imaging::RegionSet& regions) {
  LayoutGrid grid;
  const std::vector<Cell> cells = encoded_cells(regions);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    grid.at(cells[i].row, cells[i].col) = static_cast<float>(importance(regions.regions[i].rank));
  }
  return grid;
}

AnchorSet decode_top_n(const LayoutGrid& grid, int n) {
  if (n < 1 || n > kGridCells) throw InvalidArgument("decode_top_n needs 1 <= n <= 1024");
  std::array<int, kGridCells> idx;
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), [&](int a, int b) {
    const float va = grid.cells[static_cast<std::size_t>(a)];
    const float vb = grid.cells[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  });
  AnchorSet out;
  for (int i = 0; i < n; ++i) out.push_back({idx[static_cast<std::size_t>(i)] / kGridSize, idx[static_cast<std::size_t>(i)] % kGridSize, 1.0});
  return out;
}

const std::array<Rgb8, 13>& palette() {
  // Hue-spread colors, alternating lightness so neighbors stay apart.
  static const std::array<Rgb8, 13> colors = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
      {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
      {0, 128, 128},   {170, 110, 40},  {128, 0, 0},
  }};
  return colors;
}

GuidanceMarks guidance_marks(const imaging::RegionSet& regions, const AnchorSet& anchors) {
  if (regions.size() != anchors.size()) {
    throw CardinalityMismatch(std::to_string(regions.size()) + " regions vs " + std::to_string(anchors.size()) +
                              " anchors");
  }
  if (anchors.size() > palette().size()) throw CardinalityMismatch("more than 13 guidance pairs");
  GuidanceMarks marks;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    marks.push_back({static_cast<int>(i), static_cast<int>(i), palette()[i]});
  }
  return marks;
}

std::string layout_to_json(const AnchorSet& anchors, const LayoutGrid* grid) {
  nlohmann::json j;
  if (grid != nullptr) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < kGridSize; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < kGridSize; ++c) row.push_back(grid->at(r, c));
      rows.push_back(std::move(row));
    }
    j["grid"] = std::move(rows);
  }
  j["anchors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Rgb8& col = palette()[i % palette().size()];
    j["anchors"].push_back({{"row", anchors[i].row},
                            {"col", anchors[i].col},
                            {"scale", anchors[i].scale},
                            {"color", {col[0], col[1], col[2]}}});
  }
  j["order"] = "importance-desc";
  return j.dump();
}

AnchorSet anchors_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("layout JSON: ") + e.what());
  }
  if (!j.contains("anchors") || !j["anchors"].is_array()) throw FormatError("layout JSON needs an anchors array");
  AnchorSet out;
  for (const auto& a : j["anchors"]) {
    Anchor anchor{a.at("row").get<int>(), a.at("col").get<int>(), a.value("scale", 1.0)};
    if (anchor.row < 0 || anchor.row >= kGridSize || anchor.col < 0 || anchor.col >= kGridSize) {
      throw AnchorOutOfRange("anchor (" + std::to_string(anchor.row) + "," + std::to_string(anchor.col) + ")");
    }
    out.push_back(anchor);
  }
  return out;
}

imaging::RasterImage render_grid(const LayoutGrid& grid, int scale) {
  imaging::RasterImage img(kGridSize * scale, kGridSize * scale, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(grid.at(y / scale, x / scale), 0.0f, 1.0f);
  return img;
}

}  // namespace layoutmuse::layout
