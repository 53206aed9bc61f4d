#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layoutmuse/features.hpp"
#include "layoutmuse/layout_codec.hpp"

namespace layoutmuse::graph {

/// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
};

using Point = layout::Cell;  // (row, col) on the layout grid
using Triangle = std::array<int, 3>;
using Edge = std::pair<int, int>;  // first < second

struct Triangulation {
  std::vector<Triangle> faces;
  /// Union of face sides, or the collinear fallback path. Sorted, unique.
  std::vector<Edge> edges;
};

/// Exact Delaunay triangulation of distinct integer points. Cocircular
/// groups are fanned from their first vertex in angular order. With fewer
/// than three points, or all points collinear, the points are chained in
/// sorted order and there are no faces.
Triangulation delaunay(std::span<const Point> points);

struct LayoutGraph {
  std::vector<Point> positions;
  std::vector<std::vector<double>> features;  // one per node, equal widths
  Matrix weights;                             // symmetric, 0 = no edge

  int size() const { return static_cast<int>(positions.size()); }
  int neighbor_count(int v) const;
};

/// Edges from the triangulation with weight exp(-d / mean edge length).
LayoutGraph graph_from_faces(const Triangulation& tri, std::span<const Point> points,
                             std::vector<std::vector<double>> features);
LayoutGraph graph_from_faces(const Triangulation& tri, std::span<const Point> points,
                             const features::FeatureBag& bag);

/// Continuous WL embedding: row v holds iterations 0..H of
/// a'(v) = (a(v) + (1/deg v) * sum_u w(v,u) a(u)) / 2, isolated nodes unchanged.
Matrix wl_embed(const LayoutGraph& g, int iterations);

/// Exact 1-Wasserstein distance between the uniform measures on the rows
/// of X and Y, Euclidean ground cost.
double wasserstein_distance(const Matrix& x, const Matrix& y);

struct KernelResult {
  Matrix distances;
  Matrix kernel;
  double gamma = 0.0;
};

/// Pairwise distances (computed in parallel) and K = exp(-gamma D). A
/// non-positive gamma selects 1 / median of the off-diagonal distances.
KernelResult kernel_matrix(std::span<const Matrix> embeddings, double gamma = 0.0);

/// Symmetric eigen-decomposition with negative eigenvalues set to zero.
Matrix clip_psd(const Matrix& kernel);

struct Merge {
  int a = 0;  // cluster ids: 0..n-1 are items, n+i is the i-th merge
  int b = 0;
  double height = 0.0;
  int size = 0;
};

struct ClusterAssignment {
  std::vector<std::string> ids;
  std::vector<int> labels;  // by item index; clusters numbered by first member
  int k = 0;
  std::vector<Merge> dendrogram;  // full n-1 merges
};

/// Average-linkage agglomeration on D cut at k clusters. Equal linkage
/// distances merge the pair with the smallest (min member, min member) first.
ClusterAssignment hierarchical_cluster(const Matrix& distances, int k);

double adjusted_rand_index(std::span<const int> truth, std::span<const int> predicted);
/// Mean silhouette on a precomputed distance matrix; singletons score 0.
double silhouette_score(const Matrix& distances, std::span<const int> labels);
/// k in [2, min(max_k, n-1)] maximizing silhouette; 1 for tiny corpora.
int suggest_k(const Matrix& distances, int max_k = 10);

struct ClusterOptions {
  int wl_iterations = 2;
  int k = 0;  // 0 = silhouette suggestion
  double gamma = 0.0;
};

struct ClusterResult {
  std::vector<std::string> ids;
  KernelResult kernel;
  ClusterAssignment assignment;
  std::vector<std::pair<std::string, std::string>> skipped;  // id, reason
};

ClusterResult cluster_graphs(std::span<const LayoutGraph> graphs, std::vector<std::string> ids,
                             const ClusterOptions& options);

/// Full pipeline from a manifest: segment, describe, triangulate, embed,
/// cluster. Items that fail are skipped with their reason. When
/// `report_dir` is set, writes assignment.json and one contact sheet per
/// cluster of drawings overlaid with green node dots.
ClusterResult cluster_layouts(const std::filesystem::path& manifest, const ClusterOptions& options,
                              const std::optional<std::filesystem::path>& report_dir = std::nullopt);

/// Nodes of one drawing: segmented regions placed on distinct grid cells.
struct DrawingGraph {
  imaging::SaliencyPair pair;
  imaging::RegionSet regions;
  LayoutGraph graph;
};
DrawingGraph build_drawing_graph(imaging::SaliencyPair pair, const features::Extractor& extractor = features::descriptor);

}  // namespace layoutmuse::graph
