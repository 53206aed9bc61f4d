#include "layoutmuse/graph_analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "json.hpp"

namespace layoutmuse::graph {

namespace {

using i128 = __int128;

// Points use x = col, y = row.
i128 orient(const Point& a, const Point& b, const Point& c) {
  return static_cast<i128>(b.col - a.col) * (c.row - a.row) - static_cast<i128>(b.row - a.row) * (c.col - a.col);
}

// Positive when d lies inside the circle through a, b, c given counter-clockwise order.
i128 incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const i128 ax = a.col - d.col, ay = a.row - d.row;
  const i128 bx = b.col - d.col, by = b.row - d.row;
  const i128 cx = c.col - d.col, cy = c.row - d.row;
  const i128 a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
  return ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
}

int sign(i128 v) { return (v > 0) - (v < 0); }

void add_edge(std::set<Edge>& edges, int a, int b) { edges.insert({std::min(a, b), std::max(a, b)}); }

}  // namespace

Triangulation delaunay(std::span<const Point> points) {
  const int n = static_cast<int>(points.size());
  {
    std::set<std::pair<int, int>> seen;
    for (const Point& p : points) {
      if (!seen.insert({p.row, p.col}).second) {
        throw DuplicatePoints("duplicate point (" + std::to_string(p.row) + "," + std::to_string(p.col) + ")");
      }
    }
  }
  Triangulation tri;
  std::set<Edge> edges;

  bool collinear = true;
  for (int i = 2; i < n && collinear; ++i) collinear = orient(points[0], points[1], points[static_cast<std::size_t>(i)]) == 0;
  if (n < 3 || collinear) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return std::pair(points[static_cast<std::size_t>(a)].row, points[static_cast<std::size_t>(a)].col) <
             std::pair(points[static_cast<std::size_t>(b)].row, points[static_cast<std::size_t>(b)].col);
    });
    for (int i = 0; i + 1 < n; ++i) add_edge(edges, order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i + 1)]);
    tri.edges.assign(edges.begin(), edges.end());
    return tri;
  }

  // Every empty circumcircle yields one Delaunay cell; cells with more than
  // three cocircular points are fanned.
  std::set<std::vector<int>> cells;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        const Point &a = points[static_cast<std::size_t>(i)], &b = points[static_cast<std::size_t>(j)],
                    &c = points[static_cast<std::size_t>(k)];
        const int o = sign(orient(a, b, c));
        if (o == 0) continue;
        std::vector<int> on_circle = {i, j, k};
        bool empty = true;
        for (int d = 0; d < n && empty; ++d) {
          if (d == i || d == j || d == k) continue;
          const int s = sign(incircle(a, b, c, points[static_cast<std::size_t>(d)])) * o;
          if (s > 0) empty = false;
          if (s == 0) on_circle.push_back(d);
        }
        if (!empty) continue;
        std::sort(on_circle.begin(), on_circle.end());
        cells.insert(on_circle);
      }

  for (const std::vector<int>& cell : cells) {
    if (cell.size() == 3) {
      tri.faces.push_back({cell[0], cell[1], cell[2]});
      continue;
    }
    double mx = 0, my = 0;
    for (int v : cell) {
      mx += points[static_cast<std::size_t>(v)].col;
      my += points[static_cast<std::size_t>(v)].row;
    }
    mx /= static_cast<double>(cell.size());
    my /= static_cast<double>(cell.size());
    std::vector<int> ring = cell;
    std::sort(ring.begin(), ring.end(), [&](int a, int b) {
      const Point &pa = points[static_cast<std::size_t>(a)], &pb = points[static_cast<std::size_t>(b)];
      return std::atan2(pa.row - my, pa.col - mx) < std::atan2(pb.row - my, pb.col - mx);
    });
    std::rotate(ring.begin(), std::min_element(ring.begin(), ring.end()), ring.end());
    for (std::size_t t = 1; t + 1 < ring.size(); ++t) tri.faces.push_back({ring[0], ring[t], ring[t + 1]});
  }
  for (const Triangle& f : tri.faces) {
    add_edge(edges, f[0], f[1]);
    add_edge(edges, f[1], f[2]);
    add_edge(edges, f[0], f[2]);
  }
  tri.edges.assign(edges.begin(), edges.end());
  return tri;
}

int LayoutGraph::neighbor_count(int v) const {
  int deg = 0;
  for (int u = 0; u < size(); ++u) deg += weights(v, u) > 0.0;
  return deg;
}

LayoutGraph graph_from_faces(const Triangulation& tri, std::span<const Point> points,
                             std::vector<std::vector<double>> features) {
  const int n = static_cast<int>(points.size());
  if (static_cast<int>(features.size()) != n) {
    throw CardinalityMismatch(std::to_string(features.size()) + " feature vectors for " + std::to_string(n) + " points");
  }
  for (const auto& f : features) {
    if (f.size() != features.front().size()) throw WidthMismatch("node features differ in width");
  }
  LayoutGraph g;
  g.positions.assign(points.begin(), points.end());
  g.features = std::move(features);
  g.weights = Matrix(n, n);
  if (tri.edges.empty()) return g;

  auto length = [&](const Edge& e) {
    const Point &a = points[static_cast<std::size_t>(e.first)], &b = points[static_cast<std::size_t>(e.second)];
    return std::hypot(static_cast<double>(a.row - b.row), static_cast<double>(a.col - b.col));
  };
  double mean = 0.0;
  for (const Edge& e : tri.edges) mean += length(e);
  mean /= static_cast<double>(tri.edges.size());
  for (const Edge& e : tri.edges) {
    if (e.first == e.second) continue;
    const double w = std::exp(-length(e) / mean);
    g.weights(e.first, e.second) = w;
    g.weights(e.second, e.first) = w;
  }
  return g;
}

LayoutGraph graph_from_faces(const Triangulation& tri, std::span<const Point> points,
                             const features::FeatureBag& bag) {
  std::vector<std::vector<double>> feats;
  for (const features::FeatureVec& v : bag.per_region) feats.emplace_back(v.begin(), v.end());
  return graph_from_faces(tri, points, std::move(feats));
}

Matrix wl_embed(const LayoutGraph& g, int iterations) {
  if (iterations < 0) throw InvalidArgument("WL iterations must be >= 0");
  const int n = g.size();
  const int width = n > 0 ? static_cast<int>(g.features.front().size()) : 0;
  Matrix out(n, width * (iterations + 1));
  std::vector<std::vector<double>> cur = g.features;
  for (int h = 0; h <= iterations; ++h) {
    for (int v = 0; v < n; ++v)
      std::copy(cur[static_cast<std::size_t>(v)].begin(), cur[static_cast<std::size_t>(v)].end(),
                out.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(v) * out.cols + static_cast<std::size_t>(h) * width));
    if (h == iterations) break;
    std::vector<std::vector<double>> next = cur;
    for (int v = 0; v < n; ++v) {
      const int deg = g.neighbor_count(v);
      if (deg == 0) continue;
      std::vector<double> agg(static_cast<std::size_t>(width), 0.0);
      for (int u = 0; u < n; ++u) {
        const double w = g.weights(v, u);
        if (w <= 0.0) continue;
        for (int d = 0; d < width; ++d) agg[static_cast<std::size_t>(d)] += w * cur[static_cast<std::size_t>(u)][static_cast<std::size_t>(d)];
      }
      for (int d = 0; d < width; ++d) {
        next[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)] =
            0.5 * (cur[static_cast<std::size_t>(v)][static_cast<std::size_t>(d)] + agg[static_cast<std::size_t>(d)] / deg);
      }
    }
    cur = std::move(next);
  }
  return out;
}

double wasserstein_distance(const Matrix& x, const Matrix& y) {
  if (x.cols != y.cols) throw WidthMismatch("embedding widths " + std::to_string(x.cols) + " vs " + std::to_string(y.cols));
  const int n = x.rows, m = y.rows;
  if (n == 0 || m == 0) throw InvalidArgument("wasserstein_distance needs nonempty measures");

  // Min-cost flow with integer masses: each X node supplies m units, each
  // Y node absorbs n, so the uniform measures are matched exactly.
  struct Arc {
    int to;
    long long cap;
    double cost;
  };
  const int source = n + m, sink = n + m + 1, nodes = n + m + 2;
  std::vector<Arc> arcs;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(nodes));
  auto link = [&](int a, int b, long long cap, double cost) {
    adj[static_cast<std::size_t>(a)].push_back(static_cast<int>(arcs.size()));
    arcs.push_back({b, cap, cost});
    adj[static_cast<std::size_t>(b)].push_back(static_cast<int>(arcs.size()));
    arcs.push_back({a, 0, -cost});
  };
  for (int i = 0; i < n; ++i) link(source, i, m, 0.0);
  for (int j = 0; j < m; ++j) link(n + j, sink, n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double d2 = 0.0;
      const auto xi = x.row(i), yj = y.row(j);
      for (int c = 0; c < x.cols; ++c) {
        const double diff = xi[static_cast<std::size_t>(c)] - yj[static_cast<std::size_t>(c)];
        d2 += diff * diff;
      }
      link(i, n + j, static_cast<long long>(n) * m, std::sqrt(d2));
    }

  const long long demand = static_cast<long long>(n) * m;
  long long flow = 0;
  double cost = 0.0;
  std::vector<double> potential(static_cast<std::size_t>(nodes), 0.0);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  while (flow < demand) {
    std::vector<double> dist(static_cast<std::size_t>(nodes), kInf);
    std::vector<int> via(static_cast<std::size_t>(nodes), -1);
    std::vector<bool> done(static_cast<std::size_t>(nodes), false);
    dist[static_cast<std::size_t>(source)] = 0.0;
    for (int iter = 0; iter < nodes; ++iter) {
      int u = -1;
      for (int v = 0; v < nodes; ++v)
        if (!done[static_cast<std::size_t>(v)] && dist[static_cast<std::size_t>(v)] < kInf &&
            (u < 0 || dist[static_cast<std::size_t>(v)] < dist[static_cast<std::size_t>(u)]))
          u = v;
      if (u < 0) break;
      done[static_cast<std::size_t>(u)] = true;
      for (int a : adj[static_cast<std::size_t>(u)]) {
        const Arc& arc = arcs[static_cast<std::size_t>(a)];
        if (arc.cap <= 0) continue;
        const double reduced = std::max(0.0, arc.cost + potential[static_cast<std::size_t>(u)] - potential[static_cast<std::size_t>(arc.to)]);
        const double nd = dist[static_cast<std::size_t>(u)] + reduced;
        if (nd < dist[static_cast<std::size_t>(arc.to)]) {
          dist[static_cast<std::size_t>(arc.to)] = nd;
          via[static_cast<std::size_t>(arc.to)] = a;
        }
      }
    }
    if (dist[static_cast<std::size_t>(sink)] == kInf) throw Error("InternalError", "transport network disconnected");
    for (int v = 0; v < nodes; ++v)
      if (dist[static_cast<std::size_t>(v)] < kInf) potential[static_cast<std::size_t>(v)] += dist[static_cast<std::size_t>(v)];

    long long push = demand - flow;
    for (int v = sink; v != source; v = arcs[static_cast<std::size_t>(via[static_cast<std::size_t>(v)] ^ 1)].to)
      push = std::min(push, arcs[static_cast<std::size_t>(via[static_cast<std::size_t>(v)])].cap);
    for (int v = sink; v != source; v = arcs[static_cast<std::size_t>(via[static_cast<std::size_t>(v)] ^ 1)].to) {
      Arc& fwd = arcs[static_cast<std::size_t>(via[static_cast<std::size_t>(v)])];
      fwd.cap -= push;
      arcs[static_cast<std::size_t>(via[static_cast<std::size_t>(v)] ^ 1)].cap += push;
      cost += static_cast<double>(push) * fwd.cost;
    }
    flow += push;
  }
  return std::max(0.0, cost / static_cast<double>(demand));
}

KernelResult kernel_matrix(std::span<const Matrix> embeddings, double gamma) {
  const int n = static_cast<int>(embeddings.size());
  if (n == 0) throw EmptyCorpus("kernel_matrix needs at least one graph");
  KernelResult out;
  out.distances = Matrix(n, n);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.push_back({i, j});

  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16u));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t p = w; p < pairs.size(); p += workers) {
          const auto [i, j] = pairs[p];
          const double d = wasserstein_distance(embeddings[static_cast<std::size_t>(i)], embeddings[static_cast<std::size_t>(j)]);
          out.distances(i, j) = d;
          out.distances(j, i) = d;
        }
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);

  if (gamma <= 0.0) {
    std::vector<double> off;
    for (const auto& [i, j] : pairs) off.push_back(out.distances(i, j));
    double median = 0.0;
    if (!off.empty()) {
      std::sort(off.begin(), off.end());
      const std::size_t mid = off.size() / 2;
      median = off.size() % 2 ? off[mid] : 0.5 * (off[mid - 1] + off[mid]);
    }
    gamma = median > 0.0 ? 1.0 / median : 1.0;
  }
  out.gamma = gamma;
  out.kernel = Matrix(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.kernel(i, j) = std::exp(-gamma * out.distances(i, j));
  return out;
}

Matrix clip_psd(const Matrix& kernel) {
  const int n = kernel.rows;
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = 0.5 * (kernel(i, j) + kernel(j, i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd clipped = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
  Matrix out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = clipped(i, j);
  return out;
}

ClusterAssignment hierarchical_cluster(const Matrix& distances, int k) {
  const int n = distances.rows;
  if (n == 0) throw EmptyCorpus("nothing to cluster");
  if (k < 1 || k > n) throw InvalidArgument("k must lie in [1, " + std::to_string(n) + "]");

  Matrix d = distances;
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  std::vector<int> size(static_cast<std::size_t>(n), 1);
  std::vector<int> min_member(static_cast<std::size_t>(n));
  std::vector<int> cluster_id(static_cast<std::size_t>(n));
  std::vector<int> slot_of(static_cast<std::size_t>(n));  // item -> slot
  std::iota(min_member.begin(), min_member.end(), 0);
  std::iota(cluster_id.begin(), cluster_id.end(), 0);
  std::iota(slot_of.begin(), slot_of.end(), 0);

  ClusterAssignment out;
  out.k = k;
  auto snapshot = [&] {
    std::map<int, int> label_of_slot;
    out.labels.assign(static_cast<std::size_t>(n), 0);
    for (int item = 0; item < n; ++item) {
      const int slot = slot_of[static_cast<std::size_t>(item)];
      auto it = label_of_slot.find(slot);
      if (it == label_of_slot.end()) it = label_of_slot.emplace(slot, static_cast<int>(label_of_slot.size())).first;
      out.labels[static_cast<std::size_t>(item)] = it->second;
    }
  };
  if (k == n) snapshot();

  for (int step = 0; step < n - 1; ++step) {
    int best_a = -1, best_b = -1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<int, int> best_key{n, n};
    for (int a = 0; a < n; ++a) {
      if (!active[static_cast<std::size_t>(a)]) continue;
      for (int b = a + 1; b < n; ++b) {
        if (!active[static_cast<std::size_t>(b)]) continue;
        const int ma = min_member[static_cast<std::size_t>(a)], mb = min_member[static_cast<std::size_t>(b)];
        const std::pair<int, int> key{std::min(ma, mb), std::max(ma, mb)};
        if (d(a, b) < best || (d(a, b) == best && key < best_key)) {
          best = d(a, b);
          best_key = key;
          best_a = a;
          best_b = b;
        }
      }
    }
    const int na = size[static_cast<std::size_t>(best_a)], nb = size[static_cast<std::size_t>(best_b)];
    for (int c = 0; c < n; ++c) {
      if (!active[static_cast<std::size_t>(c)] || c == best_a || c == best_b) continue;
      const double merged = (na * d(best_a, c) + nb * d(best_b, c)) / (na + nb);
      d(best_a, c) = merged;
      d(c, best_a) = merged;
    }
    out.dendrogram.push_back({cluster_id[static_cast<std::size_t>(best_a)], cluster_id[static_cast<std::size_t>(best_b)], best, na + nb});
    active[static_cast<std::size_t>(best_b)] = false;
    size[static_cast<std::size_t>(best_a)] = na + nb;
    min_member[static_cast<std::size_t>(best_a)] = std::min(min_member[static_cast<std::size_t>(best_a)], min_member[static_cast<std::size_t>(best_b)]);
    cluster_id[static_cast<std::size_t>(best_a)] = n + step;
    for (int& s : slot_of)
      if (s == best_b) s = best_a;
    if (n - (step + 1) == k) snapshot();
  }
  return out;
}

double adjusted_rand_index(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw CardinalityMismatch("label vectors differ in length");
  const std::size_t n = truth.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, long long> table;
  std::map<int, long long> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    ++table[{truth[i], predicted[i]}];
    ++rows[truth[i]];
    ++cols[predicted[i]];
  }
  auto choose2 = [](long long v) { return static_cast<double>(v) * static_cast<double>(v - 1) / 2.0; };
  double index = 0, a = 0, b = 0;
  for (const auto& [key, v] : table) index += choose2(v);
  for (const auto& [key, v] : rows) a += choose2(v);
  for (const auto& [key, v] : cols) b += choose2(v);
  const double expected = a * b / choose2(static_cast<long long>(n));
  const double max_index = 0.5 * (a + b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

double silhouette_score(const Matrix& distances, std::span<const int> labels) {
  const int n = distances.rows;
  if (static_cast<int>(labels.size()) != n) throw CardinalityMismatch("labels do not match distance matrix");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) return 0.0;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (counts[own] == 1) continue;
    std::map<int, double> sums;
    for (int j = 0; j < n; ++j)
      if (j != i) sums[labels[static_cast<std::size_t>(j)]] += distances(i, j);
    const double a = sums[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, count] : counts)
      if (label != own) b = std::min(b, sums[label] / count);
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return total / n;
}

int suggest_k(const Matrix& distances, int max_k) {
  const int n = distances.rows;
  if (n < 3) return 1;
  int best_k = 2;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= std::min(max_k, n - 1); ++k) {
    const ClusterAssignment a = hierarchical_cluster(distances, k);
    const double s = silhouette_score(distances, a.labels);
    if (s > best) {
      best = s;
      best_k = k;
    }
  }
  return best_k;
}

ClusterResult cluster_graphs(std::span<const LayoutGraph> graphs, std::vector<std::string> ids,
                             const ClusterOptions& options) {
  if (graphs.empty()) throw EmptyCorpus("no graphs to cluster");
  if (ids.size() != graphs.size()) throw CardinalityMismatch("one id per graph required");
  std::vector<Matrix> embeddings;
  embeddings.reserve(graphs.size());
  for (const LayoutGraph& g : graphs) embeddings.push_back(wl_embed(g, options.wl_iterations));
  ClusterResult out;
  out.kernel = kernel_matrix(embeddings, options.gamma);
  const int k = options.k > 0 ? std::min(options.k, static_cast<int>(graphs.size())) : suggest_k(out.kernel.distances);
  out.assignment = hierarchical_cluster(out.kernel.distances, k);
  out.assignment.ids = ids;
  out.ids = std::move(ids);
  return out;
}

DrawingGraph build_drawing_graph(imaging::SaliencyPair pair, const features::Extractor& extractor) {
  DrawingGraph dg;
  dg.regions = imaging::extract_patches(pair, imaging::watershed_segment(pair.saliency));
  const features::FeatureBag bag = features::compute_bag(pair.id, dg.regions, extractor);
  const std::vector<Point> cells = layout::encoded_cells(dg.regions);
  dg.graph = graph_from_faces(delaunay(cells), cells, bag);
  dg.pair = std::move(pair);
  return dg;
}

namespace {

imaging::RasterImage overlay(const DrawingGraph& dg, int height) {
  const imaging::RasterImage& img = dg.pair.image;
  const int width = std::max(1, static_cast<int>(std::lround(static_cast<double>(img.width) * height / img.height)));
  imaging::RasterImage out = imaging::resize_bilinear(imaging::to_rgb(img), width, height);
  const double radius = std::max(2.0, height / 40.0);
  for (const Point& p : dg.graph.positions) {
    imaging::fill_disc(out, (p.col + 0.5) / layout::kGridSize * width, (p.row + 0.5) / layout::kGridSize * height, radius,
                       {0.0f, 0.85f, 0.0f});
  }
  return out;
}

void write_json_matrix(nlohmann::json& j, const char* key, const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows; ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  j[key] = std::move(rows);
}

}  // namespace

ClusterResult cluster_layouts(const std::filesystem::path& manifest, const ClusterOptions& options,
                              const std::optional<std::filesystem::path>& report_dir) {
  const std::vector<imaging::ManifestEntry> entries = imaging::read_manifest(manifest);
  if (entries.empty()) throw EmptyCorpus("manifest '" + manifest.string() + "' lists no drawings");

  std::vector<DrawingGraph> drawings;
  std::vector<std::pair<std::string, std::string>> skipped;
  for (const imaging::ManifestEntry& e : entries) {
    try {
      imaging::SaliencyPair pair = imaging::load_pair(e.image, e.saliency);
      pair.id = e.id;
      drawings.push_back(build_drawing_graph(std::move(pair)));
    } catch (const Error& err) {
      skipped.push_back({e.id, std::string(err.code()) + ": " + err.what()});
    }
  }
  if (drawings.empty()) throw EmptyCorpus("every manifest item failed to load or segment");

  std::vector<LayoutGraph> graphs;
  std::vector<std::string> ids;
  for (const DrawingGraph& d : drawings) {
    graphs.push_back(d.graph);
    ids.push_back(d.pair.id);
  }
  ClusterResult result = cluster_graphs(graphs, ids, options);
  result.skipped = std::move(skipped);

  if (report_dir) {
    std::filesystem::create_directories(*report_dir);
    nlohmann::json j;
    j["ids"] = result.ids;
    j["labels"] = result.assignment.labels;
    j["k"] = result.assignment.k;
    j["gamma"] = result.kernel.gamma;
    j["wl_iterations"] = options.wl_iterations;
    j["silhouette"] = silhouette_score(result.kernel.distances, result.assignment.labels);
    nlohmann::json merges = nlohmann::json::array();
    for (const Merge& m : result.assignment.dendrogram) merges.push_back({{"a", m.a}, {"b", m.b}, {"height", m.height}, {"size", m.size}});
    j["dendrogram"] = std::move(merges);
    nlohmann::json skipped_json = nlohmann::json::array();
    for (const auto& [id, reason] : result.skipped) skipped_json.push_back({{"id", id}, {"reason", reason}});
    j["skipped"] = std::move(skipped_json);
    write_json_matrix(j, "distances", result.kernel.distances);
    write_json_matrix(j, "kernel", result.kernel.kernel);
    std::ofstream(*report_dir / "assignment.json") << j.dump(2) << "\n";

    for (int c = 0; c < result.assignment.k; ++c) {
      std::vector<imaging::RasterImage> tiles;
      for (std::size_t i = 0; i < drawings.size(); ++i)
        if (result.assignment.labels[i] == c) tiles.push_back(overlay(drawings[i], 128));
      if (!tiles.empty()) {
        imaging::write_png(*report_dir / ("cluster_" + std::to_string(c) + ".png"), imaging::contact_sheet(tiles, 128));
      }
    }
  }
  return result;
}

}  // namespace layoutmuse::graph
