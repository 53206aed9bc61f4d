#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutmuse/compositor.hpp"
#include "layoutmuse/features.hpp"
#include "layoutmuse/networks.hpp"

namespace layoutmuse::training {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 400;
  int batch = 16;
  double lambda_gp = 10.0;
  double lambda_g_wireframe = 0.2;  // weight of D_L in the generator loss
  double lambda_g_image = 0.2;      // weight of D_C in the generator loss
  double lambda_d_wireframe = 0.2;  // outer weight of the D_L loss
  double lambda_d_image = 0.2;      // outer weight of the D_C loss
  int critic_ratio = 1;             // discriminator steps per generator step
  int checkpoint_every = 10;        // epochs; 0 keeps only the final checkpoint
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless every field is in range.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One drawing prepared for training: summed features, ground-truth grid and
/// the sprites of its own regions on the training canvas.
struct TrainItem {
  std::string id;
  features::FeatureVec features{};
  int count = 0;
  layout::LayoutGrid grid;
  compositor::SpriteSet sprites;
  ad::Tensor real_image;  // (1, 3, S, S): sprites composited at their true anchors
};

/// Segments, extracts and encodes one drawing. Throws NoRegions.
TrainItem make_item(const imaging::SaliencyPair& pair, int canvas_side,
                    const features::Extractor& extractor = features::descriptor);

/// Items of a manifest; drawings that fail to load or segment are skipped
/// and reported through `skipped` as "id: code: message".
std::vector<TrainItem> load_corpus(const std::filesystem::path& manifest, int canvas_side,
                                   std::vector<std::string>* skipped = nullptr);

struct Batch {
  ad::Tensor features;     // (b, 512)
  ad::Tensor real_grids;   // (b, 1, 32, 32)
  ad::Tensor real_images;  // (b, 3, S, S)
  std::vector<int> counts;
  std::vector<const compositor::SpriteSet*> sprites;
  std::size_t size() const { return counts.size(); }
};

Batch make_batch(std::span<const TrainItem> corpus, std::span<const int> indices);

using CriticFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

/// Mean over the batch of (||grad_x D(x)||_2 - 1)^2 at x = m * real + (1 - m) * fake,
/// one mixing weight m per item. Differentiable w.r.t. the critic's parameters.
ad::Var gradient_penalty(ad::Tape& tape, const CriticFn& critic, const ad::Tensor& real, const ad::Tensor& fake,
                         std::span<const float> mix);

/// Adam moments for one parameter store.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const nets::ParamStore& params);
  void step(nets::ParamStore& params, const TrainConfig& cfg);
  long long steps() const { return t_; }

  std::vector<ad::NamedTensor> export_state(const std::string& prefix) const;
  void import_state(const std::vector<ad::NamedTensor>& tensors, const std::string& prefix, long long steps);

 private:
  std::vector<std::string> names_;
  std::deque<ad::Tensor> m_, v_;
  long long t_ = 0;
};

/// Losses and the expectations they are assembled from, as logged.
struct StepStats {
  std::string kind;  // "d" or "g"
  int epoch = 0;
  long long step = 0;
  double loss_g = 0, loss_dl = 0, loss_dc = 0;
  double gp_l = 0, gp_c = 0;
  double dl_real = 0, dl_fake = 0;  // E[D_L(L)], E[D_L(L~)]
  double dc_real = 0, dc_fake = 0;  // E[D_C(C)], E[D_C(C~)]
  nlohmann::json to_json(const TrainConfig& cfg) const;
};

class Trainer {
 public:
  /// Throws EmptyCorpus when `corpus` is empty.
  Trainer(TrainConfig cfg, nets::NetworkConfig net_cfg, std::vector<TrainItem> corpus);

  /// Critic update; encoder and generator are frozen.
  StepStats d_step(const Batch& batch);
  /// Joint encoder + generator update; critics are frozen.
  StepStats g_step(const Batch& batch);
  /// One pass over the shuffled corpus; each batch runs critic_ratio d_steps
  /// then one g_step. Every step is appended to the result.
  std::vector<StepStats> run_epoch();

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores networks, optimizer moments, counters and the random stream.
  void load_checkpoint(const std::filesystem::path& path);

  nets::Networks& networks() { return nets_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<TrainItem>& corpus() const { return corpus_; }
  int epoch() const { return epoch_; }

  /// Generated grids for the given items in eval mode with fresh noise.
  ad::Tensor sample_grids(std::span<const int> indices, std::mt19937_64& rng);

 private:
  ad::Tensor noise(int b);
  ad::Var fake_grids(ad::Tape& tape, const Batch& batch, nets::Bind mode);

  TrainConfig cfg_;
  nets::Networks nets_;
  std::vector<TrainItem> corpus_;
  Adam adam_encoder_, adam_generator_, adam_wireframe_, adam_image_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  long long step_ = 0;
};

struct TrainResult {
  std::vector<StepStats> steps;
  std::vector<std::string> skipped;
  std::filesystem::path generator;  // out_dir/generator.bin
};

/// Output layout:
///   out_dir/train_config.json        training + network config
///   out_dir/train_log.jsonl          one line per step
///   out_dir/checkpoints/epoch_NNNN.bin (+ .json sidecar)
///   out_dir/generator.bin (+ .json)  encoder + generator for serving
/// `on_epoch` (optional) sees each finished epoch number.
TrainResult train(std::vector<TrainItem> corpus, const TrainConfig& cfg, const nets::NetworkConfig& net_cfg,
                  const std::filesystem::path& out_dir, const std::function<void(int)>& on_epoch = {});
TrainResult train(const std::filesystem::path& manifest, const TrainConfig& cfg, const nets::NetworkConfig& net_cfg,
                  const std::filesystem::path& out_dir, const std::function<void(int)>& on_epoch = {});

/// Fraction of decoded anchors whose column lies in [first, last].
double anchor_column_mass(const ad::Tensor& grids, std::span<const int> counts, int first, int last);

}  // namespace layoutmuse::training
