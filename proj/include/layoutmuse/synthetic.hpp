#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "layoutmuse/graph_analysis.hpp"
#include "layoutmuse/imaging.hpp"

// Seeded synthetic corpora for tests, acceptance runs and demos.
namespace layoutmuse::synthetic {

enum class Template { Line, Triangle, Ring };

/// Distinct grid points arranged as a horizontal line, a triangle outline or
/// a ring, with random placement and small jitter.
std::vector<graph::Point> template_points(Template t, std::mt19937_64& rng);

/// Layout graph over `template_points` whose node features are one shared
/// unit vector plus i.i.d. Gaussian noise of the given per-dimension sigma.
graph::LayoutGraph template_graph(Template t, std::mt19937_64& rng, double feature_noise, int feature_dim = 512);

struct PlantedCorpus {
  std::vector<graph::LayoutGraph> graphs;
  std::vector<std::string> ids;
  std::vector<int> truth;
};

/// Noise around 0.002 per dimension keeps the templates separable; beyond
/// roughly 0.006 the structural signal drowns.
PlantedCorpus planted_corpus(int per_template, double feature_noise, std::uint64_t seed);

/// A drawing with saliency blobs at the given normalized centers; blob i
/// has radius `radii[i]` (fraction of min side) and a distinct flat color.
imaging::SaliencyPair blob_drawing(const std::string& id, int width, int height,
                                   const std::vector<std::pair<double, double>>& centers,
                                   const std::vector<double>& radii, std::uint64_t seed);

/// Drawings whose 2 to 4 blobs all sit on the vertical center line, at
/// random heights and sizes. Their encoded anchors fall in columns 15..16.
std::vector<imaging::SaliencyPair> center_column_drawings(int count, int side, std::uint64_t seed);

}  // namespace layoutmuse::synthetic
