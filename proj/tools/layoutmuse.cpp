// Command-line front end: one subcommand per pipeline stage.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutmuse/diagnostics.hpp"
#include "layoutmuse/features.hpp"
#include "layoutmuse/graph_analysis.hpp"
#include "layoutmuse/service.hpp"
#include "layoutmuse/training.hpp"

using namespace layoutmuse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void print(const json& j) { std::cout << j.dump() << std::endl; }

void warn(const std::string& id, const std::string& reason) {
  std::cerr << json{{"warning", "skipped"}, {"id", id}, {"reason", reason}}.dump() << std::endl;
}

imaging::RasterImage overlay_boxes(const imaging::SaliencyPair& pair, const imaging::RegionSet& regions) {
  imaging::RasterImage out = pair.image;
  const int thickness = std::max(2, std::min(out.width, out.height) / 200);
  for (const imaging::Region& r : regions.regions) {
    const auto& c = layout::palette()[static_cast<std::size_t>(r.rank) % layout::palette().size()];
    imaging::draw_box(out, r.bbox, {c[0] / 255.0f, c[1] / 255.0f, c[2] / 255.0f}, thickness);
  }
  return out;
}

// ---------------------------------------------------------------- commands

struct IngestArgs {
  fs::path dir;
  fs::path out = "manifest.jsonl";
  std::string suffix = "_sal";
};

// Pairs <name>.png with <name><suffix>.png and keeps the pairs that load.
int ingest(const IngestArgs& a) {
  if (!fs::is_directory(a.dir)) throw InvalidArgument("not a directory: " + a.dir.string());
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(a.dir)) {
    const fs::path p = e.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    if (stem.size() >= a.suffix.size() && stem.ends_with(a.suffix)) continue;
    images.push_back(p);
  }
  std::sort(images.begin(), images.end());
  std::vector<imaging::ManifestEntry> entries;
  for (const fs::path& img : images) {
    const fs::path sal = img.parent_path() / (img.stem().string() + a.suffix + ".png");
    const std::string id = img.stem().string();
    if (!fs::exists(sal)) {
      warn(id, "no saliency map");
      continue;
    }
    try {
      imaging::load_pair(img, sal);
    } catch (const Error& e) {
      warn(id, e.code() + ": " + e.what());
      continue;
    }
    entries.push_back({id, fs::absolute(img), fs::absolute(sal)});
  }
  imaging::write_manifest(a.out, entries);
  print({{"manifest", a.out.string()}, {"pairs", entries.size()}, {"skipped", images.size() - entries.size()}});
  return 0;
}

struct PairArgs {
  fs::path image, saliency;
};

int segment(const PairArgs& p, const fs::path& out) {
  const imaging::SaliencyPair pair = imaging::load_pair(p.image, p.saliency);
  imaging::RegionSet regions = imaging::watershed_segment(pair.saliency);
  if (regions.empty()) throw NoRegions("saliency map has no region above threshold");
  regions = imaging::extract_patches(pair, std::move(regions));
  fs::create_directories(out / "patches");
  json list = json::array();
  for (const imaging::Region& r : regions.regions) {
    const std::string name = "patches/region_" + std::to_string(r.rank) + ".png";
    imaging::write_png(out / name, r.patch);
    list.push_back({{"rank", r.rank},
                    {"bbox", {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1}},
                    {"center", {r.cx, r.cy}},
                    {"area", r.area},
                    {"patch", name}});
  }
  const imaging::Rgb bg = imaging::background_color(pair, regions);
  const json doc = {{"id", pair.id},
                    {"width", pair.image.width},
                    {"height", pair.image.height},
                    {"background", {bg[0], bg[1], bg[2]}},
                    {"regions", list}};
  std::ofstream(out / "regions.json") << doc.dump(2) << '\n';
  imaging::write_png(out / "overlay.png", overlay_boxes(pair, regions));
  print({{"regions", regions.size()}, {"out", out.string()}});
  return 0;
}

int features_cmd(const fs::path& manifest, const fs::path& out) {
  std::vector<features::FeatureBag> bags;
  for (const imaging::ManifestEntry& e : imaging::read_manifest(manifest)) {
    try {
      imaging::SaliencyPair pair = imaging::load_pair(e.image, e.saliency);
      imaging::RegionSet regions = imaging::watershed_segment(pair.saliency);
      if (regions.empty()) throw NoRegions("no region above threshold");
      regions = imaging::extract_patches(pair, std::move(regions));
      bags.push_back(features::compute_bag(e.id, regions));
    } catch (const Error& err) {
      warn(e.id, err.code() + ": " + err.what());
    }
  }
  if (bags.empty()) throw EmptyCorpus("no usable pair in " + manifest.string());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  features::export_features(out, bags);
  print({{"features", out.string()}, {"drawings", bags.size()}});
  return 0;
}

int cluster(const fs::path& manifest, const graph::ClusterOptions& options, const fs::path& out) {
  const graph::ClusterResult r = graph::cluster_layouts(manifest, options, out);
  for (const auto& [id, reason] : r.skipped) warn(id, reason);
  print({{"k", r.assignment.k}, {"items", r.ids.size()}, {"gamma", r.kernel.gamma}, {"out", out.string()}});
  return 0;
}

struct TrainArgs {
  fs::path manifest, out, config;
  std::optional<int> epochs, batch, seed, critic_ratio;
  std::optional<double> lr;
};

int train_cmd(const TrainArgs& a) {
  training::TrainConfig cfg;
  nets::NetworkConfig net_cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw FormatError("cannot open config '" + a.config.string() + "'");
    const json j = json::parse(in);
    cfg = training::TrainConfig::from_json(j.value("train", j));
    if (j.contains("network")) net_cfg = nets::NetworkConfig::from_json(j.at("network"));
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch = *a.batch;
  if (a.seed) cfg.seed = static_cast<std::uint64_t>(*a.seed);
  if (a.critic_ratio) cfg.critic_ratio = *a.critic_ratio;
  if (a.lr) cfg.lr = *a.lr;
  cfg.validate();
  const auto result = training::train(a.manifest, cfg, net_cfg, a.out, [&](int epoch) {
    std::cerr << json{{"epoch", epoch}, {"of", cfg.epochs}}.dump() << std::endl;
  });
  for (const std::string& id : result.skipped) warn(id, "unusable pair");
  print({{"generator", result.generator.string()}, {"steps", result.steps.size()}});
  return 0;
}

struct GenerateArgs {
  PairArgs pair;
  fs::path ckpt, out;
  int count = 10;
  std::optional<std::uint64_t> seed;
};

int generate(const GenerateArgs& a) {
  if (a.count < 1) throw InvalidArgument("count must be >= 1");
  const nets::Networks nets = nets::load_generator(a.ckpt);
  const service::Session session =
      service::analyze_pair("drawing", imaging::load_pair(a.pair.image, a.pair.saliency));
  std::mt19937_64 rng(a.seed ? *a.seed : std::random_device{}());
  const auto layouts = service::generate_layouts(nets, session, a.count, rng);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    const auto& g = layouts[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "layout_%02zu", i);
    json j = json::parse(layout::layout_to_json(g.anchors, &g.grid));
    json marks = json::array();
    for (const auto& m : g.marks) {
      marks.push_back({{"region_rank", m.region_rank}, {"anchor_index", m.anchor_index}, {"color", m.color}});
    }
    j["marks"] = std::move(marks);
    std::ofstream(a.out / (std::string(stem) + ".json")) << j.dump() << '\n';
    imaging::write_png(a.out / (std::string(stem) + "_preview.png"), service::preview_image(session, g.anchors));
    imaging::write_png(a.out / (std::string(stem) + "_marks.png"), service::marks_image(session, g.anchors));
  }
  print({{"layouts", layouts.size()}, {"anchors", session.regions.size()}, {"out", a.out.string()}});
  return 0;
}

int gradcheck() {
  bool all = true;
  for (const diagnostics::CheckResult& r : diagnostics::run_all()) {
    all = all && r.ok;
    print({{"suite", r.suite}, {"check", r.name}, {"ok", r.ok}, {"max_rel_error", r.max_rel_error},
           {"detail", r.detail}});
  }
  return all ? 0 : 1;
}

struct ServeArgs {
  std::optional<fs::path> config;
  std::optional<std::string> host;
  std::optional<int> port;
  std::optional<fs::path> data_dir, ckpt;
};

int serve(const ServeArgs& a) {
  service::ServiceConfig cfg = service::ServiceConfig::load(a.config);
  if (a.host) cfg.host = *a.host;
  if (a.port) cfg.port = *a.port;
  if (a.data_dir) cfg.data_dir = *a.data_dir;
  if (a.ckpt) cfg.checkpoint = *a.ckpt;
  cfg.validate();
  service::LayoutService svc(cfg);
  service::serve(svc, cfg.host, cfg.port, [&](int port) {
    print({{"listening", cfg.host + ":" + std::to_string(port)}, {"checkpoint_loaded", svc.has_generator()}});
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-guidance layout engine"};
  app.require_subcommand(1);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Pair drawings with saliency maps into a manifest");
  ingest_cmd->add_option("--dir", ingest_args.dir, "Directory of <name>.png and <name>_sal.png")->required();
  ingest_cmd->add_option("--out", ingest_args.out, "Manifest to write (JSON lines)");
  ingest_cmd->add_option("--suffix", ingest_args.suffix, "Saliency file suffix");

  PairArgs seg_pair;
  fs::path seg_out = "segments";
  auto* segment_cmd = app.add_subcommand("segment", "Segment salient regions of one drawing");
  segment_cmd->add_option("--image", seg_pair.image)->required();
  segment_cmd->add_option("--saliency", seg_pair.saliency)->required();
  segment_cmd->add_option("--out", seg_out);

  fs::path feat_manifest, feat_out = "features.bin";
  auto* features_sub = app.add_subcommand("features", "Per-region descriptors for every manifest pair");
  features_sub->add_option("--manifest", feat_manifest)->required();
  features_sub->add_option("--out", feat_out);

  fs::path cluster_manifest, cluster_out = "report";
  graph::ClusterOptions cluster_opts;
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster layout graphs of a corpus");
  cluster_cmd->add_option("--manifest", cluster_manifest)->required();
  cluster_cmd->add_option("--k", cluster_opts.k, "Cluster count; 0 picks by silhouette");
  cluster_cmd->add_option("--wl-iterations", cluster_opts.wl_iterations);
  cluster_cmd->add_option("--gamma", cluster_opts.gamma, "Kernel bandwidth; 0 uses the median heuristic");
  cluster_cmd->add_option("--out", cluster_out);

  TrainArgs train_args;
  auto* train_sub = app.add_subcommand("train", "Train the layout generator");
  train_sub->add_option("--manifest", train_args.manifest)->required();
  train_sub->add_option("--out", train_args.out)->required();
  train_sub->add_option("--config", train_args.config, "JSON with optional 'train' and 'network' objects");
  train_sub->add_option("--epochs", train_args.epochs);
  train_sub->add_option("--batch", train_args.batch);
  train_sub->add_option("--lr", train_args.lr);
  train_sub->add_option("--seed", train_args.seed);
  train_sub->add_option("--critic-ratio", train_args.critic_ratio);

  GenerateArgs gen_args;
  auto* generate_cmd = app.add_subcommand("generate", "Generate layouts for one drawing");
  generate_cmd->add_option("--image", gen_args.pair.image)->required();
  generate_cmd->add_option("--saliency", gen_args.pair.saliency)->required();
  generate_cmd->add_option("--ckpt", gen_args.ckpt)->required();
  generate_cmd->add_option("--count", gen_args.count);
  generate_cmd->add_option("--seed", gen_args.seed);
  generate_cmd->add_option("--out", gen_args.out)->required();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the finite-difference and closed-form suites");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", serve_args.config);
  serve_cmd->add_option("--host", serve_args.host);
  serve_cmd->add_option("--port", serve_args.port);
  serve_cmd->add_option("--data-dir", serve_args.data_dir);
  serve_cmd->add_option("--ckpt", serve_args.ckpt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }

  try {
    if (*ingest_cmd) return ingest(ingest_args);
    if (*segment_cmd) return segment(seg_pair, seg_out);
    if (*features_sub) return features_cmd(feat_manifest, feat_out);
    if (*cluster_cmd) return cluster(cluster_manifest, cluster_opts, cluster_out);
    if (*train_sub) return train_cmd(train_args);
    if (*generate_cmd) return generate(gen_args);
    if (*gradcheck_cmd) return gradcheck();
    if (*serve_cmd) return serve(serve_args);
  } catch (const Error& e) {
    std::cerr << json{{"error", e.code()}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << json{{"error", "FormatError"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 1;
}
