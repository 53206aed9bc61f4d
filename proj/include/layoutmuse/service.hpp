#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "layoutmuse/compositor.hpp"
#include "layoutmuse/features.hpp"
#include "layoutmuse/imaging.hpp"
#include "layoutmuse/layout_codec.hpp"
#include "layoutmuse/networks.hpp"

namespace layoutmuse::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "layoutmuse-data";
  std::filesystem::path checkpoint;  // empty: start without a generator
  int max_sessions = 64;             // sessions kept in memory; the rest reload from disk
  int layouts_per_request = 10;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static ServiceConfig from_json(const nlohmann::json& j);
  /// Reads an optional JSON file, then lets LAYOUTMUSE_DATA_DIR override data_dir.
  static ServiceConfig load(const std::optional<std::filesystem::path>& file);
};

struct GeneratedLayout {
  int index = 0;
  layout::LayoutGrid grid;
  layout::AnchorSet anchors;
  layout::GuidanceMarks marks;
};

/// Segmented drawing plus everything generation needs.
struct Session {
  std::string id;
  imaging::SaliencyPair pair;
  imaging::RegionSet regions;  // all regions; `enabled` flags select the subset used
  std::vector<features::FeatureVec> descriptors;  // per region, same order
  imaging::Rgb background{};
  std::vector<GeneratedLayout> layouts;
  int next_layout = 0;

  imaging::RegionSet enabled_regions() const { return regions.enabled_only(); }
  /// Palette color of each region by its position among the enabled ones; null when disabled.
  nlohmann::json regions_json() const;
  /// Served view; the persisted form adds the grids.
  nlohmann::json to_json(bool with_grids = false) const;
};

/// Segments a pair and fills regions, descriptors and background.
/// Throws NoRegions.
Session analyze_pair(std::string id, imaging::SaliencyPair pair);

/// Encoder + generator loaded once and shared read-only across requests.
using GeneratorSnapshot = std::shared_ptr<const nets::Networks>;

/// Generates k layouts for the session's enabled regions, each from a fresh
/// noise draw. Marks carry the regions' ranks in the full region list.
/// Throws NoEnabledRegions.
std::vector<GeneratedLayout> generate_layouts(const nets::Networks& generator, const Session& session, int k,
                                              std::mt19937_64& rng);

/// Painter's-order composite of the session's enabled regions at the anchors,
/// at the drawing's native size.
imaging::RasterImage preview_image(const Session& session, const layout::AnchorSet& anchors);
/// Left: drawing with color boxes around enabled regions. Right: blank canvas
/// with the paired-color anchor dots, drawn four times larger than a cell dot.
imaging::RasterImage marks_image(const Session& session, const layout::AnchorSet& anchors);

/// Directory-per-session store: <root>/<id>/{image.png, saliency.png, session.json,
/// layouts/<j>.png}. Regions are re-segmented from the stored PNGs on reload,
/// which is deterministic, and the enabled flags restored from session.json.
class SessionStore {
 public:
  SessionStore(std::filesystem::path root, int max_sessions);

  struct Entry {
    std::mutex lock;  // single writer per session
    Session session;
  };

  /// Stores the uploaded PNGs, then segments what was stored so a reload sees
  /// the same input. Throws DecodeError, DimensionMismatch, NoRegions.
  std::shared_ptr<Entry> create(const std::string& image_png, const std::string& saliency_png);
  std::shared_ptr<Entry> create(const imaging::SaliencyPair& pair);
  /// Throws NotFound.
  std::shared_ptr<Entry> get(const std::string& id);
  /// Writes session.json; the caller holds the entry's lock.
  void persist(const Session& session) const;
  std::filesystem::path preview_path(const std::string& id, int index) const;
  std::filesystem::path marks_path(const std::string& id, int index) const;
  const std::filesystem::path& root() const { return root_; }
  std::size_t cached() const;

 private:
  std::shared_ptr<Entry> load(const std::string& id) const;
  void remember(const std::string& id, std::shared_ptr<Entry> entry);
  std::string fresh_id();

  std::filesystem::path root_;
  int max_sessions_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> cache_;
  std::list<std::string> recency_;  // most recent first
  std::mt19937_64 id_rng_;
};

/// Request handling independent of the HTTP transport, so the API contract
/// can be tested in-process as well as over a socket.
class LayoutService {
 public:
  explicit LayoutService(ServiceConfig cfg);

  /// Swaps in a generator checkpoint; in-flight requests keep their snapshot.
  void load_checkpoint(const std::filesystem::path& path);
  void set_generator(GeneratorSnapshot snapshot);
  bool has_generator() const;

  struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
  };

  Response create_session(const std::string& image_png, const std::string& saliency_png);
  Response get_session(const std::string& id);
  Response set_region(const std::string& id, int rank, const std::string& json_body);
  Response create_layouts(const std::string& id, const std::string& json_body);
  Response get_layout(const std::string& id, int index);
  Response get_preview(const std::string& id, int index);
  Response get_marks(const std::string& id, int index);
  Response health() const;

  /// Maps a library error to its HTTP status and JSON body.
  static Response error_response(const Error& e);

  const ServiceConfig& config() const { return cfg_; }
  SessionStore& store() { return store_; }

 private:
  GeneratorSnapshot snapshot() const;

  ServiceConfig cfg_;
  SessionStore store_;
  mutable std::mutex generator_mutex_;
  GeneratorSnapshot generator_;
  std::mutex seed_mutex_;
  std::mt19937_64 seed_rng_;
};

/// Blocks serving HTTP until `stop_serving` (or process exit). Port 0 binds
/// any free port; `on_ready` receives the bound port before requests flow.
void serve(LayoutService& service, const std::string& host, int port,
           const std::function<void(int)>& on_ready = {});
void stop_serving();

}  // namespace layoutmuse::service
