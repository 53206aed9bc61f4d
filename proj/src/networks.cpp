#include "layoutmuse/networks.hpp"

#include <map>
#include <random>

namespace layoutmuse::nets {

namespace {

ad::Var linear(ad::Tape& tape, ParamStore& p, const std::string& name, const ad::Var& x, Bind mode) {
  return ad::add_channel_bias(ad::matmul(x, p.bind(tape, name + ".weight", mode)), p.bind(tape, name + ".bias", mode));
}

ad::Var conv(ad::Tape& tape, ParamStore& p, const std::string& name, const ad::Var& x, Bind mode, ad::ConvGeom g = {}) {
  return ad::add_channel_bias(ad::conv2d(x, p.bind(tape, name + ".weight", mode), g), p.bind(tape, name + ".bias", mode));
}

ad::Var conv_t(ad::Tape& tape, ParamStore& p, const std::string& name, const ad::Var& x, Bind mode, ad::ConvGeom g = {}) {
  return ad::add_channel_bias(ad::conv_transpose2d(x, p.bind(tape, name + ".weight", mode), g),
                              p.bind(tape, name + ".bias", mode));
}

void add_linear(ParamStore& p, const std::string& name, int in, int out) {
  p.add(name + ".weight", {in, out});
  p.add(name + ".bias", {out});
}

void add_norm(ParamStore& p, const std::string& name, int channels) {
  p.add(name + ".scale", {channels});
  p.add(name + ".shift", {channels});
}

void expect_shape(const ad::Var& x, const ad::Shape& want, const char* what) {
  if (x.shape() != want) {
    throw ShapeMismatch(std::string(what) + " expects " + ad::shape_str(want) + ", got " + ad::shape_str(x.shape()));
  }
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

nlohmann::json NetworkConfig::to_json() const {
  return {{"feature_dim", feature_dim},
          {"encoder_widths", encoder_widths},
          {"noise_dim", noise_dim},
          {"generator_hidden", generator_hidden},
          {"bottleneck_channels", bottleneck_channels},
          {"bottleneck_side", bottleneck_side},
          {"upsample_channels", upsample_channels},
          {"max_anchors", max_anchors},
          {"grid_side", grid_side},
          {"wireframe_channels", wireframe_channels},
          {"wireframe_hidden", wireframe_hidden},
          {"canvas_side", canvas_side},
          {"image_channels", image_channels},
          {"image_hidden", image_hidden},
          {"leaky_slope", leaky_slope},
          {"init_std", init_std}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    j.at("feature_dim").get_to(c.feature_dim);
    j.at("encoder_widths").get_to(c.encoder_widths);
    j.at("noise_dim").get_to(c.noise_dim);
    j.at("generator_hidden").get_to(c.generator_hidden);
    j.at("bottleneck_channels").get_to(c.bottleneck_channels);
    j.at("bottleneck_side").get_to(c.bottleneck_side);
    j.at("upsample_channels").get_to(c.upsample_channels);
    j.at("max_anchors").get_to(c.max_anchors);
    j.at("grid_side").get_to(c.grid_side);
    j.at("wireframe_channels").get_to(c.wireframe_channels);
    j.at("wireframe_hidden").get_to(c.wireframe_hidden);
    j.at("canvas_side").get_to(c.canvas_side);
    j.at("image_channels").get_to(c.image_channels);
    j.at("image_hidden").get_to(c.image_hidden);
    j.at("leaky_slope").get_to(c.leaky_slope);
    j.at("init_std").get_to(c.init_std);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("network config: ") + e.what());
  }
  return c;
}

std::string NetworkConfig::hash() const { return ad::fnv1a_hex(to_json().dump()); }

ad::Parameter& ParamStore::add(std::string name, ad::Shape shape) {
  params_.emplace_back(std::move(name), ad::Tensor(shape));
  return params_.back();
}

ad::Parameter& ParamStore::get(std::string_view name) {
  for (ad::Parameter& p : params_)
    if (p.name == name) return p;
  throw NotFound("no parameter '" + std::string(name) + "'");
}

const ad::Parameter& ParamStore::get(std::string_view name) const {
  for (const ad::Parameter& p : params_)
    if (p.name == name) return p;
  throw NotFound("no parameter '" + std::string(name) + "'");
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const ad::Parameter& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (ad::Parameter& p : params_) p.zero_grad();
}

ad::Var ParamStore::bind(ad::Tape& tape, std::string_view name, Bind mode) {
  ad::Parameter& p = get(name);
  return mode == Bind::Trainable ? tape.parameter(p) : tape.frozen(p);
}

void init_weights(ParamStore& params, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std);
  for (ad::Parameter& p : params.all()) {
    if (ends_with(p.name, ".bias") || ends_with(p.name, ".shift")) {
      std::fill(p.value.data().begin(), p.value.data().end(), 0.0f);
    } else if (ends_with(p.name, ".scale")) {
      std::fill(p.value.data().begin(), p.value.data().end(), 1.0f);
    } else {
      for (float& v : p.value.data()) v = static_cast<float>(normal(rng));
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------- encoder

Encoder::Encoder(const NetworkConfig& cfg) : cfg_(cfg) {
  int in = cfg.feature_dim;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    add_linear(params, "fc" + std::to_string(i + 1), in, cfg.encoder_widths[i]);
    in = cfg.encoder_widths[i];
  }
}

ad::Var Encoder::forward(ad::Tape& tape, const ad::Var& features, Bind mode) {
  if (features.shape().size() != 2 || features.shape()[1] != cfg_.feature_dim) {
    throw ShapeMismatch("encoder expects (b, " + std::to_string(cfg_.feature_dim) + "), got " + ad::shape_str(features.shape()));
  }
  ad::Var h = features;
  const std::size_t layers = cfg_.encoder_widths.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = linear(tape, params, "fc" + std::to_string(i + 1), h, mode);
    if (i + 1 < layers) h = ad::leaky_relu(h, cfg_.leaky_slope);
  }
  return h;
}

// -------------------------------------------------------------- generator

Generator::Generator(const NetworkConfig& cfg) : cfg_(cfg) {
  const int bottleneck = cfg.bottleneck_channels * cfg.bottleneck_side * cfg.bottleneck_side;
  add_linear(params, "fc1", cfg.encoded_dim() + cfg.noise_dim, cfg.generator_hidden);
  add_norm(params, "bn1", cfg.generator_hidden);
  add_linear(params, "fc2", cfg.generator_hidden, bottleneck);
  add_norm(params, "bn2", bottleneck);
  const int c0 = cfg.bottleneck_channels + cfg.max_anchors;
  params.add("up1.weight", {c0, cfg.upsample_channels[0], 4, 4});
  params.add("up1.bias", {cfg.upsample_channels[0]});
  add_norm(params, "bn3", cfg.upsample_channels[0]);
  params.add("up2.weight", {cfg.upsample_channels[0], cfg.upsample_channels[1], 4, 4});
  params.add("up2.bias", {cfg.upsample_channels[1]});
  add_norm(params, "bn4", cfg.upsample_channels[1]);
  params.add("out.weight", {cfg.upsample_channels[1], 1, 3, 3});
  params.add("out.bias", {1});
}

ad::Tensor count_planes(const std::vector<int>& counts, int max_anchors, int side) {
  ad::Tensor t({static_cast<int>(counts.size()), max_anchors, side, side});
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const int n = counts[b];
    if (n < 1 || n > max_anchors) {
      throw AnchorOutOfRange("anchor count " + std::to_string(n) + " outside 1.." + std::to_string(max_anchors));
    }
    float* p = t.ptr() + (b * static_cast<std::size_t>(max_anchors) + static_cast<std::size_t>(n - 1)) * plane;
    std::fill(p, p + plane, 1.0f);
  }
  return t;
}

ad::Var Generator::forward(ad::Tape& tape, const ad::Var& encoded, const ad::Var& noise,
                           const std::vector<int>& counts, Bind mode, bool training) {
  const int b = encoded.shape().empty() ? 0 : encoded.shape()[0];
  expect_shape(encoded, {b, cfg_.encoded_dim()}, "generator encoded input");
  expect_shape(noise, {b, cfg_.noise_dim}, "generator noise");
  if (static_cast<int>(counts.size()) != b) throw ShapeMismatch("generator needs one anchor count per item");
  const ad::Tensor planes = count_planes(counts, cfg_.max_anchors, cfg_.bottleneck_side);

  auto norm = [&](const ad::Var& x, const std::string& name, std::size_t slot) {
    return ad::batchnorm(x, params.bind(tape, name + ".scale", mode), params.bind(tape, name + ".shift", mode),
                         bn_stats[slot], training);
  };
  const double slope = cfg_.leaky_slope;
  std::array<ad::Var, 2> z_parts{encoded, noise};
  ad::Var h = ad::concat<float>(z_parts, 1);
  h = ad::leaky_relu(norm(linear(tape, params, "fc1", h, mode), "bn1", 0), slope);
  h = ad::leaky_relu(norm(linear(tape, params, "fc2", h, mode), "bn2", 1), slope);
  h = ad::reshape(h, {b, cfg_.bottleneck_channels, cfg_.bottleneck_side, cfg_.bottleneck_side});
  std::array<ad::Var, 2> parts{h, tape.constant(planes)};
  h = ad::concat<float>(parts, 1);
  h = ad::leaky_relu(norm(conv_t(tape, params, "up1", h, mode), "bn3", 2), slope);
  h = ad::leaky_relu(norm(conv_t(tape, params, "up2", h, mode), "bn4", 3), slope);
  h = conv_t(tape, params, "out", h, mode, ad::ConvGeom{3, 1, 1});
  return ad::add_scalar(ad::scale(ad::tanh(h), 0.5), 0.5);
}

// ------------------------------------------------------ wireframe critic

WireframeCritic::WireframeCritic(const NetworkConfig& cfg) : cfg_(cfg) {
  int in = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    params.add("conv" + std::to_string(i + 1) + ".weight", {cfg.wireframe_channels[i], in, 4, 4});
    params.add("conv" + std::to_string(i + 1) + ".bias", {cfg.wireframe_channels[i]});
    in = cfg.wireframe_channels[i];
  }
  const int side = cfg.grid_side / 8;
  add_linear(params, "fc1", in * side * side, cfg.wireframe_hidden);
  add_linear(params, "fc2", cfg.wireframe_hidden, 1);
}

ad::Var WireframeCritic::forward(ad::Tape& tape, const ad::Var& grid, Bind mode) {
  const int b = grid.shape().empty() ? 0 : grid.shape()[0];
  expect_shape(grid, {b, 1, cfg_.grid_side, cfg_.grid_side}, "wireframe critic");
  ad::Var h = grid;
  for (int i = 1; i <= 3; ++i) h = ad::leaky_relu(conv(tape, params, "conv" + std::to_string(i), h, mode), cfg_.leaky_slope);
  h = ad::reshape(h, {b, static_cast<int>(h.value().size()) / b});
  h = ad::leaky_relu(linear(tape, params, "fc1", h, mode), cfg_.leaky_slope);
  return ad::reshape(linear(tape, params, "fc2", h, mode), {b});
}

// ---------------------------------------------------------- image critic

ImageCritic::ImageCritic(const NetworkConfig& cfg) : cfg_(cfg) {
  int in = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    params.add("conv" + std::to_string(i + 1) + ".weight", {cfg.image_channels[i], in, 4, 4});
    params.add("conv" + std::to_string(i + 1) + ".bias", {cfg.image_channels[i]});
    in = cfg.image_channels[i] + 3;  // next stage also sees the pyramid level
  }
  const int side = cfg.canvas_side / 8;
  add_linear(params, "fc1", in * side * side, cfg.image_hidden);
  add_linear(params, "fc2", cfg.image_hidden, 1);
}

std::vector<int> ImageCritic::stage_sides() const {
  return {cfg_.canvas_side / 2, cfg_.canvas_side / 4, cfg_.canvas_side / 8};
}

ad::Var ImageCritic::forward(ad::Tape& tape, const ad::Var& image, Bind mode) {
  const int b = image.shape().empty() ? 0 : image.shape()[0];
  expect_shape(image, {b, 3, cfg_.canvas_side, cfg_.canvas_side}, "image critic");
  // Both tracks start from the image, so the first stage convolves it directly.
  ad::Var learned = ad::leaky_relu(conv(tape, params, "conv1", image, mode), cfg_.leaky_slope);
  ad::Var fixed = ad::blur_downsample(image);
  for (int i = 2; i <= 3; ++i) {
    std::array<ad::Var, 2> both{learned, fixed};
    learned = ad::leaky_relu(conv(tape, params, "conv" + std::to_string(i), ad::concat<float>(both, 1), mode), cfg_.leaky_slope);
    fixed = ad::blur_downsample(fixed);
  }
  std::array<ad::Var, 2> both{learned, fixed};
  ad::Var h = ad::concat<float>(both, 1);
  h = ad::reshape(h, {b, static_cast<int>(h.value().size()) / b});
  h = ad::leaky_relu(linear(tape, params, "fc1", h, mode), cfg_.leaky_slope);
  return ad::reshape(linear(tape, params, "fc2", h, mode), {b});
}

// ------------------------------------------------------------- bundles

Networks::Networks(const NetworkConfig& cfg)
    : config(cfg), encoder(cfg), generator(cfg), wireframe_critic(cfg), image_critic(cfg) {}

void Networks::init(std::uint64_t seed) {
  init_weights(encoder.params, seed * 4 + 0, config.init_std);
  init_weights(generator.params, seed * 4 + 1, config.init_std);
  init_weights(wireframe_critic.params, seed * 4 + 2, config.init_std);
  init_weights(image_critic.params, seed * 4 + 3, config.init_std);
  for (auto& s : generator.bn_stats) s = ad::BatchNormStats<float>{};
}

std::vector<ad::NamedTensor> export_tensors(const Networks& nets, bool generator_only) {
  std::vector<ad::NamedTensor> out;
  auto dump = [&](const ParamStore& p, const std::string& prefix) {
    for (const ad::Parameter& param : p.all()) out.push_back({prefix + param.name, param.value});
  };
  dump(nets.encoder.params, "encoder.");
  dump(nets.generator.params, "generator.");
  const int sizes[4] = {nets.config.generator_hidden,
                        nets.config.bottleneck_channels * nets.config.bottleneck_side * nets.config.bottleneck_side,
                        nets.config.upsample_channels[0], nets.config.upsample_channels[1]};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = nets.generator.bn_stats[i];
    const std::string base = "generator.bn" + std::to_string(i + 1);
    out.push_back({base + ".running_mean", s.mean.size() ? s.mean : ad::Tensor({sizes[i]}, 0.0f)});
    out.push_back({base + ".running_var", s.var.size() ? s.var : ad::Tensor({sizes[i]}, 1.0f)});
  }
  if (!generator_only) {
    dump(nets.wireframe_critic.params, "wireframe_critic.");
    dump(nets.image_critic.params, "image_critic.");
  }
  return out;
}

void import_tensors(Networks& nets, const std::vector<ad::NamedTensor>& tensors, bool generator_only) {
  std::map<std::string, const ad::Tensor*> by_name;
  for (const ad::NamedTensor& t : tensors) by_name[t.name] = &t.value;
  auto take = [&](const std::string& name, const ad::Shape& shape) -> const ad::Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw FormatError("tensor '" + name + "' has shape " + ad::shape_str(it->second->shape()) + ", expected " +
                        ad::shape_str(shape));
    }
    return *it->second;
  };
  auto fill = [&](ParamStore& p, const std::string& prefix) {
    for (ad::Parameter& param : p.all()) {
      param.value = take(prefix + param.name, param.value.shape());
      param.zero_grad();
    }
  };
  fill(nets.encoder.params, "encoder.");
  fill(nets.generator.params, "generator.");
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string base = "generator.bn" + std::to_string(i + 1);
    const ad::Shape shape = nets.generator.params.get("bn" + std::to_string(i + 1) + ".scale").value.shape();
    nets.generator.bn_stats[i].mean = take(base + ".running_mean", shape);
    nets.generator.bn_stats[i].var = take(base + ".running_var", shape);
  }
  if (!generator_only) {
    fill(nets.wireframe_critic.params, "wireframe_critic.");
    fill(nets.image_critic.params, "image_critic.");
  }
}

void save_generator(const std::filesystem::path& path, const Networks& nets, const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["config"] = nets.config.to_json();
  meta["config_hash"] = nets.config.hash();
  meta["contents"] = "encoder+generator";
  ad::save_tensors(path, export_tensors(nets, true), meta);
}

Networks load_generator(const std::filesystem::path& path) {
  const nlohmann::json side = ad::load_sidecar(path);
  if (!side.contains("config")) throw FormatError("checkpoint sidecar has no config");
  const NetworkConfig cfg = NetworkConfig::from_json(side["config"]);
  if (side.value("config_hash", std::string()) != cfg.hash()) throw FormatError("checkpoint config hash mismatch");
  Networks nets(cfg);
  import_tensors(nets, ad::load_tensors(path), true);
  return nets;
}

}  // namespace layoutmuse::nets
