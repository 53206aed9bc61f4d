#include "layoutmuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "layoutmuse/autodiff/checkpoint.hpp"
#include "layoutmuse/layout_codec.hpp"

namespace layoutmuse::training {

namespace fs = std::filesystem;
using nets::Bind;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("training config: ") + what);
  };
  require(lr > 0, "lr must be positive");
  require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "adam betas must lie in (0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(epochs >= 1, "epochs must be at least 1");
  require(batch >= 1, "batch must be at least 1");
  require(lambda_gp >= 0 && lambda_g_wireframe >= 0 && lambda_g_image >= 0 && lambda_d_wireframe >= 0 &&
              lambda_d_image >= 0,
          "loss weights must be non-negative");
  require(critic_ratio >= 1, "critic_ratio must be at least 1");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"epochs", epochs},
          {"batch", batch},
          {"lambda_gp", lambda_gp},
          {"lambda_g_wireframe", lambda_g_wireframe},
          {"lambda_g_image", lambda_g_image},
          {"lambda_d_wireframe", lambda_d_wireframe},
          {"lambda_d_image", lambda_d_image},
          {"critic_ratio", critic_ratio},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lambda_gp = j.value("lambda_gp", c.lambda_gp);
  c.lambda_g_wireframe = j.value("lambda_g_wireframe", c.lambda_g_wireframe);
  c.lambda_g_image = j.value("lambda_g_image", c.lambda_g_image);
  c.lambda_d_wireframe = j.value("lambda_d_wireframe", c.lambda_d_wireframe);
  c.lambda_d_image = j.value("lambda_d_image", c.lambda_d_image);
  c.critic_ratio = j.value("critic_ratio", c.critic_ratio);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- corpus

TrainItem make_item(const imaging::SaliencyPair& pair, int canvas_side, const features::Extractor& extractor) {
  imaging::RegionSet regions = imaging::extract_patches(pair, imaging::watershed_segment(pair.saliency));
  TrainItem item;
  item.id = pair.id;
  item.count = static_cast<int>(regions.size());
  item.features = features::sum_features(features::compute_bag(pair.id, regions, extractor));
  item.grid = layout::encode_ground_truth(regions);
  item.sprites = compositor::sprites_from_regions(regions, imaging::background_color(pair, regions), canvas_side,
                                                  canvas_side);
  ad::Tape tape;
  const ad::Var g = tape.constant(ad::Tensor({layout::kGridSize, layout::kGridSize},
                                             std::vector<float>(item.grid.cells.begin(), item.grid.cells.end())));
  item.real_image = compositor::soft_composite(tape, item.sprites, g, item.count).image.value();
  return item;
}

std::vector<TrainItem> load_corpus(const fs::path& manifest, int canvas_side, std::vector<std::string>* skipped) {
  std::vector<TrainItem> items;
  for (const imaging::ManifestEntry& e : imaging::read_manifest(manifest)) {
    try {
      items.push_back(make_item(imaging::load_pair(e.image, e.saliency), canvas_side));
      items.back().id = e.id;
    } catch (const Error& err) {
      if (skipped) skipped->push_back(e.id + ": " + err.code() + ": " + err.what());
    }
  }
  return items;
}

Batch make_batch(std::span<const TrainItem> corpus, std::span<const int> indices) {
  if (indices.empty()) throw InvalidArgument("empty batch");
  const int b = static_cast<int>(indices.size());
  const ad::Shape img = corpus[static_cast<std::size_t>(indices[0])].real_image.shape();
  Batch batch;
  batch.features = ad::Tensor({b, features::kFeatureDim});
  batch.real_grids = ad::Tensor({b, 1, layout::kGridSize, layout::kGridSize});
  batch.real_images = ad::Tensor({b, 3, img[2], img[3]});
  const std::size_t img_size = batch.real_images.size() / static_cast<std::size_t>(b);
  for (int i = 0; i < b; ++i) {
    const TrainItem& it = corpus[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    if (it.real_image.shape() != img) throw ShapeMismatch("batch items use different canvas sizes");
    const auto u = static_cast<std::size_t>(i);
    std::copy(it.features.begin(), it.features.end(), batch.features.ptr() + u * features::kFeatureDim);
    std::copy(it.grid.cells.begin(), it.grid.cells.end(), batch.real_grids.ptr() + u * layout::kGridCells);
    std::copy_n(it.real_image.ptr(), img_size, batch.real_images.ptr() + u * img_size);
    batch.counts.push_back(it.count);
    batch.sprites.push_back(&it.sprites);
  }
  return batch;
}

// ---------------------------------------------------------------- penalty

ad::Var gradient_penalty(ad::Tape& tape, const CriticFn& critic, const ad::Tensor& real, const ad::Tensor& fake,
                         std::span<const float> mix) {
  if (real.shape() != fake.shape()) {
    throw ShapeMismatch("gradient penalty batches differ: " + ad::shape_str(real.shape()) + " vs " +
                        ad::shape_str(fake.shape()));
  }
  const int b = real.dim(0);
  if (mix.size() != static_cast<std::size_t>(b)) throw ShapeMismatch("one mixing weight per item required");
  ad::Tensor blend(real.shape());
  const std::size_t item = real.size() / static_cast<std::size_t>(b);
  for (std::size_t i = 0; i < real.size(); ++i) {
    const float m = mix[i / item];
    blend[i] = m * real[i] + (1.0f - m) * fake[i];
  }
  const ad::Var x = tape.input(std::move(blend));
  const ad::Var scores = critic(tape, x);
  const ad::Var grad = tape.grad_graph(ad::sum(scores), x);
  // Per-item norm; the epsilon keeps the square root differentiable at zero.
  const ad::Var norms = ad::sqrt(ad::add_scalar(ad::sum_rows(ad::square(grad)), 1e-12));
  return ad::mean(ad::square(ad::add_scalar(norms, -1.0)));
}

// ---------------------------------------------------------------- adam

Adam::Adam(const nets::ParamStore& params) {
  for (const ad::Parameter& p : params.all()) {
    names_.push_back(p.name);
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(nets::ParamStore& params, const TrainConfig& cfg) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (ad::Parameter& p : params.all()) {
    float* w = p.value.ptr();
    const float* g = p.grad.ptr();
    float* m = m_[k].ptr();
    float* v = v_[k].ptr();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      m[i] = static_cast<float>(cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i]);
      v[i] = static_cast<float>(cfg.beta2 * v[i] + (1 - cfg.beta2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
    ++k;
  }
}

std::vector<ad::NamedTensor> Adam::export_state(const std::string& prefix) const {
  std::vector<ad::NamedTensor> out;
  for (std::size_t k = 0; k < names_.size(); ++k) {
    out.push_back({prefix + names_[k] + ".m", m_[k]});
    out.push_back({prefix + names_[k] + ".v", v_[k]});
  }
  return out;
}

void Adam::import_state(const std::vector<ad::NamedTensor>& tensors, const std::string& prefix, long long steps) {
  for (std::size_t k = 0; k < names_.size(); ++k) {
    for (auto [suffix, target] : {std::pair{".m", &m_[k]}, std::pair{".v", &v_[k]}}) {
      const std::string name = prefix + names_[k] + suffix;
      auto it = std::find_if(tensors.begin(), tensors.end(), [&](const ad::NamedTensor& t) { return t.name == name; });
      if (it == tensors.end()) throw FormatError("checkpoint lacks optimizer state " + name);
      if (it->value.shape() != target->shape()) throw FormatError("optimizer state " + name + " has the wrong shape");
      *target = it->value;
    }
  }
  t_ = steps;
}

// ---------------------------------------------------------------- stats

nlohmann::json StepStats::to_json(const TrainConfig& cfg) const {
  return {{"kind", kind},
          {"epoch", epoch},
          {"step", step},
          {"L_G", loss_g},
          {"L_DL", loss_dl},
          {"L_DC", loss_dc},
          {"GP_L", gp_l},
          {"GP_C", gp_c},
          {"E_DL_real", dl_real},
          {"E_DL_fake", dl_fake},
          {"E_DC_real", dc_real},
          {"E_DC_fake", dc_fake},
          {"lambda", cfg.lambda_gp},
          {"lambda1", cfg.lambda_g_wireframe},
          {"lambda2", cfg.lambda_g_image},
          {"lambda3", cfg.lambda_d_wireframe},
          {"lambda4", cfg.lambda_d_image}};
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig cfg, nets::NetworkConfig net_cfg, std::vector<TrainItem> corpus)
    : cfg_(std::move(cfg)), nets_(net_cfg), corpus_(std::move(corpus)), rng_(cfg_.seed) {
  cfg_.validate();
  if (corpus_.empty()) throw EmptyCorpus("training needs at least one drawing with regions");
  for (const TrainItem& it : corpus_) {
    if (it.real_image.rank() != 4 || it.real_image.dim(2) != net_cfg.canvas_side ||
        it.real_image.dim(3) != net_cfg.canvas_side) {
      throw ShapeMismatch("item " + it.id + " was prepared for a different canvas size");
    }
  }
  nets_.init(cfg_.seed);
  adam_encoder_ = Adam(nets_.encoder.params);
  adam_generator_ = Adam(nets_.generator.params);
  adam_wireframe_ = Adam(nets_.wireframe_critic.params);
  adam_image_ = Adam(nets_.image_critic.params);
}

ad::Tensor Trainer::noise(int b) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  ad::Tensor z({b, nets_.config.noise_dim});
  for (float& v : z.data()) v = d(rng_);
  return z;
}

ad::Var Trainer::fake_grids(ad::Tape& tape, const Batch& batch, Bind mode) {
  const int b = static_cast<int>(batch.size());
  const ad::Var e = nets_.encoder.forward(tape, tape.input(batch.features), mode);
  return nets_.generator.forward(tape, e, tape.input(noise(b)), batch.counts, mode, true);
}

StepStats Trainer::d_step(const Batch& batch) {
  const int b = static_cast<int>(batch.size());
  StepStats s;
  s.kind = "d";
  s.epoch = epoch_;
  s.step = step_++;

  ad::Tape tape;
  const ad::Tensor fake_l = fake_grids(tape, batch, Bind::Frozen).value();
  const ad::Var fake_c =
      compositor::soft_composite_batch(tape, batch.sprites, tape.constant(fake_l));
  const ad::Tensor fake_c_value = fake_c.value();

  auto& wc = nets_.wireframe_critic;
  auto& ic = nets_.image_critic;
  const CriticFn d_l = [&](ad::Tape& t, const ad::Var& x) { return wc.forward(t, x, Bind::Trainable); };
  const CriticFn d_c = [&](ad::Tape& t, const ad::Var& x) { return ic.forward(t, x, Bind::Trainable); };

  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::vector<float> mix_l(static_cast<std::size_t>(b)), mix_c(static_cast<std::size_t>(b));
  for (float& m : mix_l) m = unit(rng_);
  for (float& m : mix_c) m = unit(rng_);

  const ad::Var dl_real = ad::mean(d_l(tape, tape.constant(batch.real_grids)));
  const ad::Var dl_fake = ad::mean(d_l(tape, tape.constant(fake_l)));
  const ad::Var gp_l = gradient_penalty(tape, d_l, batch.real_grids, fake_l, mix_l);
  const ad::Var dc_real = ad::mean(d_c(tape, tape.constant(batch.real_images)));
  const ad::Var dc_fake = ad::mean(d_c(tape, tape.constant(fake_c_value)));
  const ad::Var gp_c = gradient_penalty(tape, d_c, batch.real_images, fake_c_value, mix_c);

  const ad::Var loss_dl =
      ad::scale(ad::add(ad::sub(dl_fake, dl_real), ad::scale(gp_l, cfg_.lambda_gp)), cfg_.lambda_d_wireframe);
  const ad::Var loss_dc =
      ad::scale(ad::add(ad::sub(dc_fake, dc_real), ad::scale(gp_c, cfg_.lambda_gp)), cfg_.lambda_d_image);

  // The critics share no parameters, so one sweep over the sum updates both.
  wc.params.zero_grad();
  ic.params.zero_grad();
  tape.backward(ad::add(loss_dl, loss_dc));
  adam_wireframe_.step(wc.params, cfg_);
  adam_image_.step(ic.params, cfg_);

  s.loss_dl = loss_dl.value()[0];
  s.loss_dc = loss_dc.value()[0];
  s.gp_l = gp_l.value()[0];
  s.gp_c = gp_c.value()[0];
  s.dl_real = dl_real.value()[0];
  s.dl_fake = dl_fake.value()[0];
  s.dc_real = dc_real.value()[0];
  s.dc_fake = dc_fake.value()[0];
  return s;
}

StepStats Trainer::g_step(const Batch& batch) {
  StepStats s;
  s.kind = "g";
  s.epoch = epoch_;
  s.step = step_++;

  ad::Tape tape;
  const ad::Var fake_l = fake_grids(tape, batch, Bind::Trainable);
  const ad::Var fake_c = compositor::soft_composite_batch(tape, batch.sprites, fake_l);
  const ad::Var dl_fake = ad::mean(nets_.wireframe_critic.forward(tape, fake_l, Bind::Frozen));
  const ad::Var dc_fake = ad::mean(nets_.image_critic.forward(tape, fake_c, Bind::Frozen));
  const ad::Var loss =
      ad::add(ad::scale(dl_fake, -cfg_.lambda_g_wireframe), ad::scale(dc_fake, -cfg_.lambda_g_image));

  nets_.encoder.params.zero_grad();
  nets_.generator.params.zero_grad();
  tape.backward(loss);
  adam_encoder_.step(nets_.encoder.params, cfg_);
  adam_generator_.step(nets_.generator.params, cfg_);

  s.loss_g = loss.value()[0];
  s.dl_fake = dl_fake.value()[0];
  s.dc_fake = dc_fake.value()[0];
  return s;
}

std::vector<StepStats> Trainer::run_epoch() {
  ++epoch_;
  const int n = static_cast<int>(corpus_.size());
  const int b = cfg_.batch;
  const int batches = (n + b - 1) / b;
  // A stream of shuffled passes; small corpora fill a batch with repeats.
  std::vector<int> order;
  while (static_cast<int>(order.size()) < batches * b) {
    std::vector<int> pass(static_cast<std::size_t>(n));
    std::iota(pass.begin(), pass.end(), 0);
    std::shuffle(pass.begin(), pass.end(), rng_);
    order.insert(order.end(), pass.begin(), pass.end());
  }
  std::vector<StepStats> log;
  for (int k = 0; k < batches; ++k) {
    const std::span<const int> idx(order.data() + static_cast<std::size_t>(k) * b, static_cast<std::size_t>(b));
    const Batch batch = make_batch(corpus_, idx);
    for (int r = 0; r < cfg_.critic_ratio; ++r) log.push_back(d_step(batch));
    log.push_back(g_step(batch));
  }
  return log;
}

ad::Tensor Trainer::sample_grids(std::span<const int> indices, std::mt19937_64& rng) {
  const Batch batch = make_batch(corpus_, indices);
  const int b = static_cast<int>(batch.size());
  std::normal_distribution<float> d(0.0f, 1.0f);
  ad::Tensor z({b, nets_.config.noise_dim});
  for (float& v : z.data()) v = d(rng);
  ad::Tape tape;
  const ad::Var e = nets_.encoder.forward(tape, tape.input(batch.features), Bind::Frozen);
  return nets_.generator.forward(tape, e, tape.input(std::move(z)), batch.counts, Bind::Frozen, false).value();
}

void Trainer::save_checkpoint(const fs::path& path) const {
  std::vector<ad::NamedTensor> tensors = nets::export_tensors(nets_, false);
  for (auto [prefix, adam] : {std::pair{"adam.encoder.", &adam_encoder_}, {"adam.generator.", &adam_generator_},
                              {"adam.wireframe_critic.", &adam_wireframe_}, {"adam.image_critic.", &adam_image_}}) {
    auto state = adam->export_state(prefix);
    tensors.insert(tensors.end(), std::make_move_iterator(state.begin()), std::make_move_iterator(state.end()));
  }
  std::ostringstream rng_state;
  rng_state << rng_;
  const nlohmann::json meta = {{"config", nets_.config.to_json()},
                               {"config_hash", nets_.config.hash()},
                               {"train_config", cfg_.to_json()},
                               {"contents", "full"},
                               {"epoch", epoch_},
                               {"step", step_},
                               {"adam_steps",
                                {adam_encoder_.steps(), adam_generator_.steps(), adam_wireframe_.steps(),
                                 adam_image_.steps()}},
                               {"rng", rng_state.str()}};
  ad::save_tensors(path, tensors, meta);
}

void Trainer::load_checkpoint(const fs::path& path) {
  const nlohmann::json side = ad::load_sidecar(path);
  if (side.value("contents", std::string()) != "full") throw FormatError("not a full training checkpoint");
  if (side.value("config_hash", std::string()) != nets_.config.hash()) {
    throw FormatError("checkpoint network config differs from the trainer's");
  }
  const std::vector<ad::NamedTensor> tensors = ad::load_tensors(path);
  nets::import_tensors(nets_, tensors, false);
  const auto& steps = side.at("adam_steps");
  adam_encoder_.import_state(tensors, "adam.encoder.", steps.at(0).get<long long>());
  adam_generator_.import_state(tensors, "adam.generator.", steps.at(1).get<long long>());
  adam_wireframe_.import_state(tensors, "adam.wireframe_critic.", steps.at(2).get<long long>());
  adam_image_.import_state(tensors, "adam.image_critic.", steps.at(3).get<long long>());
  epoch_ = side.at("epoch").get<int>();
  step_ = side.at("step").get<long long>();
  std::istringstream rng_state(side.at("rng").get<std::string>());
  rng_state >> rng_;
}

// ---------------------------------------------------------------- driver

TrainResult train(std::vector<TrainItem> corpus, const TrainConfig& cfg, const nets::NetworkConfig& net_cfg,
                  const fs::path& out_dir, const std::function<void(int)>& on_epoch) {
  Trainer trainer(cfg, net_cfg, std::move(corpus));
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream conf(out_dir / "train_config.json");
    conf << nlohmann::json{{"train", cfg.to_json()}, {"network", net_cfg.to_json()}}.dump(2) << '\n';
  }
  std::ofstream log(out_dir / "train_log.jsonl");
  if (!log) throw InvalidArgument("cannot write " + (out_dir / "train_log.jsonl").string());

  TrainResult result;
  char name[32];
  for (int e = 1; e <= cfg.epochs; ++e) {
    for (StepStats& s : trainer.run_epoch()) {
      log << s.to_json(cfg).dump() << '\n';
      result.steps.push_back(std::move(s));
    }
    log.flush();
    const bool last = e == cfg.epochs;
    if (last || (cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0)) {
      std::snprintf(name, sizeof name, "epoch_%04d.bin", e);
      trainer.save_checkpoint(out_dir / "checkpoints" / name);
    }
    if (on_epoch) on_epoch(e);
  }
  result.generator = out_dir / "generator.bin";
  nets::save_generator(result.generator, trainer.networks(),
                       {{"epoch", trainer.epoch()}, {"train_config", cfg.to_json()}});
  return result;
}

TrainResult train(const fs::path& manifest, const TrainConfig& cfg, const nets::NetworkConfig& net_cfg,
                  const fs::path& out_dir, const std::function<void(int)>& on_epoch) {
  std::vector<std::string> skipped;
  std::vector<TrainItem> corpus = load_corpus(manifest, net_cfg.canvas_side, &skipped);
  if (corpus.empty()) throw EmptyCorpus("no usable drawings in " + manifest.string());
  TrainResult r = train(std::move(corpus), cfg, net_cfg, out_dir, on_epoch);
  r.skipped = std::move(skipped);
  return r;
}

double anchor_column_mass(const ad::Tensor& grids, std::span<const int> counts, int first, int last) {
  const int b = grids.dim(0);
  if (counts.size() != static_cast<std::size_t>(b)) throw CardinalityMismatch("one count per grid required");
  long long inside = 0, total = 0;
  for (int i = 0; i < b; ++i) {
    layout::LayoutGrid g;
    std::copy_n(grids.ptr() + static_cast<std::size_t>(i) * layout::kGridCells, layout::kGridCells, g.cells.begin());
    for (const layout::Anchor& a : layout::decode_top_n(g, counts[static_cast<std::size_t>(i)])) {
      inside += a.col >= first && a.col <= last;
      ++total;
    }
  }
  return total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
}

}  // namespace layoutmuse::training
