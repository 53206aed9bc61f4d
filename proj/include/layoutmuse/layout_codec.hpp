#pragma once

#include <array>
#include <string>
#include <vector>

#include "layoutmuse/imaging.hpp"

namespace layoutmuse::layout {

inline constexpr int kGridSize = 32;
inline constexpr int kGridCells = kGridSize * kGridSize;

/// 32x32 wireframe layout, row-major, values in [0, 1].
struct LayoutGrid {
  std::array<float, kGridCells> cells{};

  float& at(int row, int col) { return cells[static_cast<std::size_t>(row * kGridSize + col)]; }
  float at(int row, int col) const { return cells[static_cast<std::size_t>(row * kGridSize + col)]; }
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

struct Anchor {
  int row = 0;
  int col = 0;
  double scale = 1.0;  // carried through, never generated

  bool operator==(const Anchor&) const = default;
};

/// Ordered by importance, most important first.
using AnchorSet = std::vector<Anchor>;

using Rgb8 = std::array<std::uint8_t, 3>;

struct GuidancePair {
  int region_rank = 0;
  int anchor_index = 0;
  Rgb8 color{};
};

using GuidanceMarks = std::vector<GuidancePair>;

/// Importance weight of the region with the given rank: exp(-0.1 * rank).
double importance(int rank);

Cell quantize_center(double cx, double cy);

/// Writes importance(rank) at each region's quantized center. When a cell is
/// taken the lower-ranked region moves to the nearest free cell by Manhattan
/// distance, row-major among equals. Regions are placed in rank order.
LayoutGrid encode_ground_truth(const imaging::RegionSet& regions);
/// The cells used by `encode_ground_truth`, in rank order.
std::vector<Cell> encoded_cells(const imaging::RegionSet& regions);

/// The n largest cells, descending, ties row-major. Scales are 1.
AnchorSet decode_top_n(const LayoutGrid& grid, int n);

/// Thirteen fixed, pairwise distinct colors used for paired boxes and dots.
const std::array<Rgb8, 13>& palette();

GuidanceMarks guidance_marks(const imaging::RegionSet& regions, const AnchorSet& anchors);

/// {"grid": optional 32x32, "anchors": [{"row","col","scale","color"}], "order": "importance-desc"}
std::string layout_to_json(const AnchorSet& anchors, const LayoutGrid* grid = nullptr);
AnchorSet anchors_from_json(const std::string& json);

/// Debug rendering: grid values as gray levels, upscaled by `scale`.
imaging::RasterImage render_grid(const LayoutGrid& grid, int scale = 8);

}  // namespace layoutmuse::layout
