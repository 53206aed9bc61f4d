#include "layoutmuse/service.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "httplib.h"

namespace layoutmuse::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex_color(const layout::Rgb8& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

imaging::Rgb to_rgb(const layout::Rgb8& c) { return {c[0] / 255.0f, c[1] / 255.0f, c[2] / 255.0f}; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("missing file '" + path.filename().string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, path);
}

void write_image(const fs::path& path, const imaging::RasterImage& image) {
  const std::vector<std::uint8_t> png = imaging::encode_png(image);
  write_file(path, std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

imaging::RasterImage decode(const std::string& bytes, const char* what) {
  if (bytes.empty()) throw DecodeError(std::string(what) + " is empty");
  try {
    return imaging::decode_png(
        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  } catch (const DecodeError& e) {
    throw DecodeError(std::string(what) + ": " + e.what());
  }
}

// Ids are hex; anything else cannot name a session directory.
bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

// Segmentation, patches, descriptors and background of a stored pair.
void analyze(Session& s) {
  imaging::RegionSet regions = imaging::watershed_segment(s.pair.saliency);
  if (regions.empty()) throw NoRegions("saliency map has no region above threshold");
  s.regions = imaging::extract_patches(s.pair, std::move(regions));
  s.descriptors.clear();
  for (const imaging::Region& r : s.regions.regions) s.descriptors.push_back(features::descriptor(r));
  s.background = imaging::background_color(s.pair, s.regions);
}

json layout_json(const std::string& session_id, const GeneratedLayout& g, bool with_grid) {
  json j = json::parse(layout::layout_to_json(g.anchors, with_grid ? &g.grid : nullptr));
  j["index"] = g.index;
  json marks = json::array();
  for (const layout::GuidancePair& m : g.marks) {
    marks.push_back({{"region_rank", m.region_rank}, {"anchor_index", m.anchor_index}, {"color", hex_color(m.color)}});
  }
  j["marks"] = std::move(marks);
  const std::string base = "/sessions/" + session_id + "/layouts/" + std::to_string(g.index);
  j["preview_url"] = base + "/preview.png";
  j["marks_url"] = base + "/marks.png";
  return j;
}

GeneratedLayout layout_from_json(const json& j) {
  GeneratedLayout g;
  g.index = j.at("index").get<int>();
  g.anchors = layout::anchors_from_json(j.dump());
  if (j.contains("grid")) {
    const json& rows = j.at("grid");
    for (int r = 0; r < layout::kGridSize; ++r)
      for (int c = 0; c < layout::kGridSize; ++c) g.grid.at(r, c) = rows.at(r).at(c).get<float>();
  }
  for (const json& m : j.at("marks")) {
    layout::GuidancePair p;
    p.region_rank = m.at("region_rank").get<int>();
    p.anchor_index = m.at("anchor_index").get<int>();
    unsigned r = 0, gr = 0, b = 0;
    std::sscanf(m.at("color").get<std::string>().c_str(), "#%02x%02x%02x", &r, &gr, &b);
    p.color = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(gr), static_cast<std::uint8_t>(b)};
    g.marks.push_back(p);
  }
  return g;
}

int parse_index(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw InvalidArgument(std::string("bad ") + what);
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument(std::string("bad ") + what + " '" + text + "'");
  }
}

LayoutService::Response json_response(int status, const json& body) {
  return {status, "application/json", body.dump()};
}

}  // namespace

// ------------------------------------------------------------------ config

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw InvalidArgument("port must be in 0..65535");
  if (max_sessions < 1) throw InvalidArgument("max_sessions must be >= 1");
  if (layouts_per_request < 1) throw InvalidArgument("layouts_per_request must be >= 1");
  if (data_dir.empty()) throw InvalidArgument("data_dir must not be empty");
}

json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"data_dir", data_dir.string()},
          {"checkpoint", checkpoint.string()},
          {"max_sessions", max_sessions},
          {"layouts_per_request", layouts_per_request}};
}

ServiceConfig ServiceConfig::from_json(const json& j) {
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.checkpoint = j.value("checkpoint", c.checkpoint.string());
    c.max_sessions = j.value("max_sessions", c.max_sessions);
    c.layouts_per_request = j.value("layouts_per_request", c.layouts_per_request);
  } catch (const json::exception& e) {
    throw FormatError(std::string("service config: ") + e.what());
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::optional<fs::path>& file) {
  ServiceConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw FormatError("cannot open config '" + file->string() + "'");
    try {
      c = from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("service config: ") + e.what());
    }
  }
  if (const char* dir = std::getenv("LAYOUTMUSE_DATA_DIR"); dir && *dir) c.data_dir = dir;
  c.validate();
  return c;
}

// ----------------------------------------------------------------- session

json Session::regions_json() const {
  json out = json::array();
  int enabled_index = 0;
  for (const imaging::Region& r : regions.regions) {
    json color = nullptr;
    if (r.enabled) color = hex_color(layout::palette()[static_cast<std::size_t>(enabled_index++)]);
    out.push_back({{"rank", r.rank},
                   {"bbox", {{"x0", r.bbox.x0}, {"y0", r.bbox.y0}, {"x1", r.bbox.x1}, {"y1", r.bbox.y1}}},
                   {"center", {{"x", r.cx}, {"y", r.cy}}},
                   {"area", r.area},
                   {"enabled", r.enabled},
                   {"color", color}});
  }
  return out;
}

json Session::to_json(bool with_grids) const {
  json layouts_out = json::array();
  for (const GeneratedLayout& g : layouts) layouts_out.push_back(layout_json(id, g, with_grids));
  return {{"id", id},
          {"width", pair.image.width},
          {"height", pair.image.height},
          {"background", {background[0], background[1], background[2]}},
          {"regions", regions_json()},
          {"layouts", std::move(layouts_out)},
          {"next_layout", next_layout}};
}

Session analyze_pair(std::string id, imaging::SaliencyPair pair) {
  Session s;
  s.id = std::move(id);
  s.pair = std::move(pair);
  s.pair.id = s.id;
  analyze(s);
  return s;
}

// --------------------------------------------------------------- generation

std::vector<GeneratedLayout> generate_layouts(const nets::Networks& generator, const Session& session, int k,
                                              std::mt19937_64& rng) {
  if (k < 1) throw InvalidArgument("layout count must be >= 1");
  std::vector<int> original_rank;
  features::FeatureBag bag;
  bag.drawing_id = session.id;
  for (std::size_t i = 0; i < session.regions.size(); ++i) {
    if (!session.regions.regions[i].enabled) continue;
    original_rank.push_back(session.regions.regions[i].rank);
    bag.per_region.push_back(session.descriptors[i]);
  }
  if (bag.per_region.empty()) throw NoEnabledRegions("every region of session '" + session.id + "' is disabled");
  const int n = static_cast<int>(bag.per_region.size());
  const features::FeatureVec sum = features::sum_features(bag);

  const nets::NetworkConfig& cfg = generator.config;
  ad::Tensor feats({k, cfg.feature_dim});
  for (int b = 0; b < k; ++b) std::copy(sum.begin(), sum.end(), feats.data().begin() + b * cfg.feature_dim);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  ad::Tensor z({k, cfg.noise_dim});
  for (float& v : z.data()) v = normal(rng);

  // Frozen binding in eval mode only reads parameters and running statistics,
  // so sharing one snapshot across threads is safe.
  auto& nets = const_cast<nets::Networks&>(generator);
  ad::Tape tape;
  const ad::Var encoded = nets.encoder.forward(tape, tape.input(std::move(feats)), nets::Bind::Frozen);
  const ad::Var grids = nets.generator.forward(tape, encoded, tape.input(std::move(z)), std::vector<int>(k, n),
                                               nets::Bind::Frozen, false);
  const auto& values = grids.value().data();

  const imaging::RegionSet enabled = session.enabled_regions();
  std::vector<GeneratedLayout> out(static_cast<std::size_t>(k));
  for (int b = 0; b < k; ++b) {
    GeneratedLayout& g = out[static_cast<std::size_t>(b)];
    std::copy_n(values.begin() + b * layout::kGridCells, layout::kGridCells, g.grid.cells.begin());
    g.anchors = layout::decode_top_n(g.grid, n);
    g.marks = layout::guidance_marks(enabled, g.anchors);
    for (layout::GuidancePair& m : g.marks) m.region_rank = original_rank[static_cast<std::size_t>(m.region_rank)];
  }
  return out;
}

imaging::RasterImage preview_image(const Session& session, const layout::AnchorSet& anchors) {
  const imaging::RegionSet enabled = session.enabled_regions();
  if (enabled.size() != anchors.size()) {
    throw CardinalityMismatch(std::to_string(enabled.size()) + " enabled regions vs " +
                              std::to_string(anchors.size()) + " anchors");
  }
  const int w = session.pair.image.width, h = session.pair.image.height;
  const compositor::SpriteSet set = compositor::sprites_from_regions(enabled, session.background, w, h);
  return compositor::hard_composite(set, anchors).image;
}

imaging::RasterImage marks_image(const Session& session, const layout::AnchorSet& anchors) {
  const imaging::RegionSet enabled = session.enabled_regions();
  if (enabled.size() != anchors.size()) {
    throw CardinalityMismatch(std::to_string(enabled.size()) + " enabled regions vs " +
                              std::to_string(anchors.size()) + " anchors");
  }
  const int w = session.pair.image.width, h = session.pair.image.height;
  imaging::RasterImage boxes = session.pair.image;
  imaging::RasterImage dots(w, h, 3, 1.0f);
  const int thickness = std::max(2, std::min(w, h) / 200);
  // A plain dot would cover a quarter cell; these are four times that.
  const double radius = 4.0 * 0.25 * std::min(w, h) / layout::kGridSize;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const imaging::Rgb color = to_rgb(layout::palette()[i]);
    imaging::draw_box(boxes, enabled.regions[i].bbox, color, thickness);
    const auto [x, y] = compositor::anchor_center(anchors[i], w, h);
    imaging::fill_disc(dots, x, y, radius, color);
  }
  const std::vector<imaging::RasterImage> panels{std::move(boxes), std::move(dots)};
  return imaging::contact_sheet(panels, h);
}

// ------------------------------------------------------------ session store

SessionStore::SessionStore(fs::path root, int max_sessions)
    : root_(std::move(root)), max_sessions_(std::max(1, max_sessions)), id_rng_(std::random_device{}()) {
  fs::create_directories(root_);
}

std::string SessionStore::fresh_id() {
  for (;;) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id_rng_()));
    if (!fs::exists(root_ / buf)) return buf;
  }
}

std::shared_ptr<SessionStore::Entry> SessionStore::create(const std::string& image_png,
                                                          const std::string& saliency_png) {
  auto entry = std::make_shared<Entry>();
  Session& s = entry->session;
  s.pair = imaging::make_pair("", imaging::to_rgb(decode(image_png, "image")),
                              imaging::to_saliency(decode(saliency_png, "saliency")));
  analyze(s);

  std::string id;
  {
    std::lock_guard lock(mutex_);
    id = fresh_id();
    fs::create_directories(root_ / id / "layouts");
  }
  s.id = id;
  s.pair.id = id;
  try {
    write_file(root_ / id / "image.png", image_png);
    write_file(root_ / id / "saliency.png", saliency_png);
    persist(s);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(root_ / id, ec);
    throw;
  }
  remember(id, entry);
  return entry;
}

std::shared_ptr<SessionStore::Entry> SessionStore::create(const imaging::SaliencyPair& pair) {
  const auto as_string = [](const std::vector<std::uint8_t>& v) { return std::string(v.begin(), v.end()); };
  return create(as_string(imaging::encode_png(pair.image)),
                as_string(imaging::encode_png(imaging::saliency_to_image(pair.saliency))));
}

std::shared_ptr<SessionStore::Entry> SessionStore::get(const std::string& id) {
  if (!valid_id(id)) throw NotFound("unknown session '" + id + "'");
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(id); it != cache_.end()) {
      recency_.remove(id);
      recency_.push_front(id);
      return it->second;
    }
  }
  std::shared_ptr<Entry> entry = load(id);
  std::lock_guard lock(mutex_);
  // Another request may have loaded it meanwhile; keep the first copy.
  if (auto it = cache_.find(id); it != cache_.end()) return it->second;
  cache_.emplace(id, entry);
  recency_.push_front(id);
  return entry;
}

std::shared_ptr<SessionStore::Entry> SessionStore::load(const std::string& id) const {
  const fs::path dir = root_ / id;
  if (!fs::exists(dir / "session.json")) throw NotFound("unknown session '" + id + "'");
  json j;
  try {
    j = json::parse(read_file(dir / "session.json"));
  } catch (const json::exception& e) {
    throw FormatError("session '" + id + "': " + e.what());
  }
  auto entry = std::make_shared<Entry>();
  Session& s = entry->session;
  s.id = id;
  s.pair = imaging::load_pair(dir / "image.png", dir / "saliency.png");
  s.pair.id = id;
  analyze(s);
  try {
    const json& regions = j.at("regions");
    if (regions.size() != s.regions.size()) throw FormatError("session '" + id + "': region count changed");
    for (std::size_t i = 0; i < regions.size(); ++i) s.regions.regions[i].enabled = regions[i].at("enabled").get<bool>();
    for (const json& l : j.at("layouts")) s.layouts.push_back(layout_from_json(l));
    s.next_layout = j.at("next_layout").get<int>();
  } catch (const json::exception& e) {
    throw FormatError("session '" + id + "': " + e.what());
  }
  return entry;
}

void SessionStore::remember(const std::string& id, std::shared_ptr<Entry> entry) {
  std::lock_guard lock(mutex_);
  cache_[id] = std::move(entry);
  recency_.remove(id);
  recency_.push_front(id);
  // Evict least recent entries nobody else holds; they reload from disk.
  for (auto it = recency_.end(); static_cast<int>(cache_.size()) > max_sessions_ && it != recency_.begin();) {
    --it;
    auto found = cache_.find(*it);
    if (found->second.use_count() == 1) {
      cache_.erase(found);
      it = recency_.erase(it);
    }
  }
}

std::size_t SessionStore::cached() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

void SessionStore::persist(const Session& session) const {
  write_file(root_ / session.id / "session.json", session.to_json(true).dump());
}

fs::path SessionStore::preview_path(const std::string& id, int index) const {
  return root_ / id / "layouts" / (std::to_string(index) + ".png");
}

fs::path SessionStore::marks_path(const std::string& id, int index) const {
  return root_ / id / "layouts" / (std::to_string(index) + "_marks.png");
}

// ---------------------------------------------------------------- service

LayoutService::LayoutService(ServiceConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      store_(cfg_.data_dir / "sessions", cfg_.max_sessions),
      seed_rng_(std::random_device{}()) {
  if (!cfg_.checkpoint.empty()) load_checkpoint(cfg_.checkpoint);
}

void LayoutService::load_checkpoint(const fs::path& path) {
  set_generator(std::make_shared<const nets::Networks>(nets::load_generator(path)));
}

void LayoutService::set_generator(GeneratorSnapshot snapshot) {
  std::lock_guard lock(generator_mutex_);
  generator_ = std::move(snapshot);
}

bool LayoutService::has_generator() const { return snapshot() != nullptr; }

GeneratorSnapshot LayoutService::snapshot() const {
  std::lock_guard lock(generator_mutex_);
  return generator_;
}

LayoutService::Response LayoutService::error_response(const Error& e) {
  const std::string& code = e.code();
  int status = 400;
  if (code == "NotFound") {
    status = 404;
  } else if (code == "NoRegions" || code == "NoEnabledRegions" || code == "DimensionMismatch") {
    status = 422;
  } else if (code == "NoCheckpoint") {
    status = 409;
  } else if (code == "DecodeError" || code == "InvalidArgument") {
    status = 400;
  } else {
    status = 500;
  }
  return json_response(status, {{"error", code}, {"message", e.what()}});
}

namespace {

template <class Fn>
LayoutService::Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return LayoutService::error_response(e);
  } catch (const json::exception& e) {
    return LayoutService::error_response(InvalidArgument(std::string("bad JSON body: ") + e.what()));
  } catch (const std::exception& e) {
    return json_response(500, {{"error", "InternalError"}, {"message", e.what()}});
  }
}

}  // namespace

LayoutService::Response LayoutService::create_session(const std::string& image_png, const std::string& saliency_png) {
  return guarded([&] {
    auto entry = store_.create(image_png, saliency_png);
    std::lock_guard lock(entry->lock);
    return json_response(201, entry->session.to_json());
  });
}

LayoutService::Response LayoutService::get_session(const std::string& id) {
  return guarded([&] {
    auto entry = store_.get(id);
    std::lock_guard lock(entry->lock);
    return json_response(200, entry->session.to_json());
  });
}

LayoutService::Response LayoutService::set_region(const std::string& id, int rank, const std::string& json_body) {
  return guarded([&] {
    auto entry = store_.get(id);
    const json body = json::parse(json_body);
    if (!body.contains("enabled") || !body.at("enabled").is_boolean()) {
      throw InvalidArgument("body needs a boolean 'enabled'");
    }
    std::lock_guard lock(entry->lock);
    Session& s = entry->session;
    if (rank < 0 || rank >= static_cast<int>(s.regions.size())) {
      throw NotFound("session '" + id + "' has no region " + std::to_string(rank));
    }
    s.regions.regions[static_cast<std::size_t>(rank)].enabled = body.at("enabled").get<bool>();
    store_.persist(s);
    return json_response(200, {{"regions", s.regions_json()}});
  });
}

LayoutService::Response LayoutService::create_layouts(const std::string& id, const std::string& json_body) {
  return guarded([&] {
    auto entry = store_.get(id);
    const json body = json_body.empty() ? json::object() : json::parse(json_body);
    const int k = body.value("count", cfg_.layouts_per_request);
    if (k < 1 || k > 100) throw InvalidArgument("count must be in 1..100");
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
      seed = body.at("seed").get<std::uint64_t>();
    } else {
      std::lock_guard lock(seed_mutex_);
      seed = seed_rng_();
    }
    const GeneratorSnapshot gen = snapshot();
    if (!gen) throw NoCheckpoint("no generator checkpoint loaded");

    std::lock_guard lock(entry->lock);
    Session& s = entry->session;
    std::mt19937_64 rng(seed);
    std::vector<GeneratedLayout> fresh = generate_layouts(*gen, s, k, rng);
    json out = json::array();
    for (GeneratedLayout& g : fresh) {
      g.index = s.next_layout++;
      write_image(store_.preview_path(id, g.index), preview_image(s, g.anchors));
      write_image(store_.marks_path(id, g.index), marks_image(s, g.anchors));
      out.push_back(layout_json(id, g, false));
      s.layouts.push_back(std::move(g));
    }
    store_.persist(s);
    return json_response(200, {{"session", id}, {"layouts", std::move(out)}});
  });
}

namespace {

const GeneratedLayout& find_layout(const Session& s, int index) {
  for (const GeneratedLayout& g : s.layouts)
    if (g.index == index) return g;
  throw NotFound("session '" + s.id + "' has no layout " + std::to_string(index));
}

}  // namespace

LayoutService::Response LayoutService::get_layout(const std::string& id, int index) {
  return guarded([&] {
    auto entry = store_.get(id);
    std::lock_guard lock(entry->lock);
    return json_response(200, layout_json(id, find_layout(entry->session, index), true));
  });
}

LayoutService::Response LayoutService::get_preview(const std::string& id, int index) {
  return guarded([&] {
    auto entry = store_.get(id);
    std::lock_guard lock(entry->lock);
    find_layout(entry->session, index);
    return Response{200, "image/png", read_file(store_.preview_path(id, index))};
  });
}

LayoutService::Response LayoutService::get_marks(const std::string& id, int index) {
  return guarded([&] {
    auto entry = store_.get(id);
    std::lock_guard lock(entry->lock);
    find_layout(entry->session, index);
    return Response{200, "image/png", read_file(store_.marks_path(id, index))};
  });
}

LayoutService::Response LayoutService::health() const {
  return json_response(200, {{"status", "ok"}, {"checkpoint_loaded", has_generator()}});
}

// -------------------------------------------------------------------- HTTP

namespace {

std::mutex server_mutex;
httplib::Server* active_server = nullptr;

void reply(httplib::Response& res, const LayoutService::Response& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

void serve(LayoutService& service, const std::string& host, int port, const std::function<void(int)>& on_ready) {
  httplib::Server server;
  using Req = httplib::Request;
  using Res = httplib::Response;
  const auto wrap = [](auto&& fn) {
    return [fn](const Req& req, Res& res) {
      reply(res, guarded([&] { return fn(req); }));
    };
  };

  server.Post("/sessions", wrap([&service](const Req& req) {
                if (!req.has_file("image") || !req.has_file("saliency")) {
                  throw InvalidArgument("multipart fields 'image' and 'saliency' are required");
                }
                return service.create_session(req.get_file_value("image").content,
                                              req.get_file_value("saliency").content);
              }));
  server.Get("/sessions/:id",
             wrap([&service](const Req& req) { return service.get_session(req.path_params.at("id")); }));
  server.Patch("/sessions/:id/regions/:rank", wrap([&service](const Req& req) {
                 return service.set_region(req.path_params.at("id"), parse_index(req.path_params.at("rank"), "rank"),
                                           req.body);
               }));
  server.Post("/sessions/:id/layouts", wrap([&service](const Req& req) {
                return service.create_layouts(req.path_params.at("id"), req.body);
              }));
  server.Get("/sessions/:id/layouts/:j", wrap([&service](const Req& req) {
               return service.get_layout(req.path_params.at("id"), parse_index(req.path_params.at("j"), "layout index"));
             }));
  server.Get("/sessions/:id/layouts/:j/preview.png", wrap([&service](const Req& req) {
               return service.get_preview(req.path_params.at("id"),
                                          parse_index(req.path_params.at("j"), "layout index"));
             }));
  server.Get("/sessions/:id/layouts/:j/marks.png", wrap([&service](const Req& req) {
               return service.get_marks(req.path_params.at("id"), parse_index(req.path_params.at("j"), "layout index"));
             }));
  server.Get("/healthz", wrap([&service](const Req&) { return service.health(); }));
  server.set_error_handler([](const Req&, Res& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", res.status == 404 ? "NotFound" : "HttpError"}, {"message", "no such route"}}.dump(),
                      "application/json");
    }
  });

  {
    std::lock_guard lock(server_mutex);
    active_server = &server;
  }
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    std::lock_guard lock(server_mutex);
    active_server = nullptr;
    throw InvalidArgument("cannot listen on " + host + ":" + std::to_string(port));
  }
  if (on_ready) on_ready(bound);
  server.listen_after_bind();
  std::lock_guard lock(server_mutex);
  active_server = nullptr;
}

void stop_serving() {
  std::lock_guard lock(server_mutex);
  if (active_server) active_server->stop();
}

}  // namespace layoutmuse::service
