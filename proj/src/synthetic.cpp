#include "layoutmuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace layoutmuse::synthetic {

namespace {

void push_unique(std::vector<graph::Point>& pts, std::set<std::pair<int, int>>& seen, int row, int col) {
  row = std::clamp(row, 0, layout::kGridSize - 1);
  col = std::clamp(col, 0, layout::kGridSize - 1);
  if (seen.insert({row, col}).second) pts.push_back({row, col});
}

}  // namespace

std::vector<graph::Point> template_points(Template t, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> jitter(-1, 1);
  std::vector<graph::Point> pts;
  std::set<std::pair<int, int>> seen;
  switch (t) {
    case Template::Line: {
      // Evenly spaced points on a horizon line.
      const int row = std::uniform_int_distribution<int>(8, 23)(rng);
      const int step = std::uniform_int_distribution<int>(3, 5)(rng);
      const int start = std::uniform_int_distribution<int>(0, layout::kGridSize - 1 - 5 * step)(rng);
      for (int i = 0; i < 6; ++i) push_unique(pts, seen, row, start + step * i);
      break;
    }
    case Template::Triangle: {
      // Three corners around a focal point at their centroid.
      const double cr = std::uniform_real_distribution<double>(13, 18)(rng);
      const double cc = std::uniform_real_distribution<double>(13, 18)(rng);
      const double radius = std::uniform_real_distribution<double>(9, 12)(rng);
      const double phase = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
      push_unique(pts, seen, static_cast<int>(std::lround(cr)), static_cast<int>(std::lround(cc)));
      for (int i = 0; i < 3; ++i) {
        const double ang = phase + 2 * std::numbers::pi * i / 3;
        push_unique(pts, seen, static_cast<int>(std::lround(cr + radius * std::sin(ang))) + jitter(rng),
                    static_cast<int>(std::lround(cc + radius * std::cos(ang))) + jitter(rng));
      }
      break;
    }
    case Template::Ring: {
      const double cr = std::uniform_real_distribution<double>(14, 17)(rng);
      const double cc = std::uniform_real_distribution<double>(14, 17)(rng);
      const double radius = std::uniform_real_distribution<double>(9, 12)(rng);
      const double phase = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
      for (int i = 0; i < 8; ++i) {
        const double ang = phase + 2 * std::numbers::pi * i / 8;
        push_unique(pts, seen, static_cast<int>(std::lround(cr + radius * std::sin(ang))),
                    static_cast<int>(std::lround(cc + radius * std::cos(ang))));
      }
      break;
    }
  }
  return pts;
}

graph::LayoutGraph template_graph(Template t, std::mt19937_64& rng, double feature_noise, int feature_dim) {
  const std::vector<graph::Point> pts = template_points(t, rng);
  // The shared base vector is fixed so every drawing in every template
  // starts from the same appearance.
  std::vector<double> base(static_cast<std::size_t>(feature_dim));
  {
    std::mt19937_64 base_rng(0x5eed);
    std::normal_distribution<double> d;
    double norm = 0;
    for (double& v : base) {
      v = std::abs(d(base_rng));
      norm += v * v;
    }
    for (double& v : base) v /= std::sqrt(norm);
  }
  std::normal_distribution<double> noise(0.0, feature_noise);
  std::vector<std::vector<double>> feats;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> f = base;
    for (double& v : f) v += noise(rng);
    feats.push_back(std::move(f));
  }
  return graph::graph_from_faces(graph::delaunay(pts), pts, std::move(feats));
}

PlantedCorpus planted_corpus(int per_template, double feature_noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PlantedCorpus out;
  const Template templates[] = {Template::Line, Template::Triangle, Template::Ring};
  const char* names[] = {"line", "triangle", "ring"};
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < per_template; ++i) {
      out.graphs.push_back(template_graph(templates[t], rng, feature_noise));
      out.ids.push_back(std::string(names[t]) + "_" + std::to_string(i));
      out.truth.push_back(t);
    }
  return out;
}

imaging::SaliencyPair blob_drawing(const std::string& id, int width, int height,
                                   const std::vector<std::pair<double, double>>& centers,
                                   const std::vector<double>& radii, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> tone(0.15f, 0.95f);
  imaging::RasterImage img(width, height, 3);
  const imaging::Rgb bg = {0.92f, 0.9f, 0.85f};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = bg[static_cast<std::size_t>(c)];
  imaging::SaliencyMap sal(width, height);
  const double side = std::min(width, height);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const imaging::Rgb color = {tone(rng), tone(rng), tone(rng)};
    const double cx = centers[i].first * width, cy = centers[i].second * height, r = radii[i] * side;
    imaging::fill_disc(img, cx, cy, r, color);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const float v = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * 0.6 * r * 0.6 * r)));
        sal.at(x, y) = std::max(sal.at(x, y), v);
      }
  }
  return imaging::make_pair(id, std::move(img), std::move(sal));
}

std::vector<imaging::SaliencyPair> center_column_drawings(int count, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> blobs(2, 4);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01), radius(0.06, 0.09);
  std::vector<imaging::SaliencyPair> out;
  for (int k = 0; k < count; ++k) {
    const int n = blobs(rng);
    std::vector<std::pair<double, double>> centers;
    std::vector<double> radii;
    for (int i = 0; i < n; ++i) {
      // Evenly spread rows keep the blobs apart.
      const double cy = (i + 0.5) / n + jitter(rng);
      centers.emplace_back(0.5 + jitter(rng), cy);
      radii.push_back(std::min(radius(rng), 0.4 / n));
    }
    out.push_back(blob_drawing("column_" + std::to_string(k), side, side, centers, radii, rng()));
  }
  return out;
}

}  // namespace layoutmuse::synthetic
