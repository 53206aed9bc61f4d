#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "layoutmuse/autodiff/checkpoint.hpp"
#include "layoutmuse/autodiff/ops.hpp"

namespace layoutmuse::nets {

/// Every architecture dimension in one place; its JSON form is hashed into
/// checkpoint sidecars.
struct NetworkConfig {
  int feature_dim = 512;
  std::array<int, 3> encoder_widths{256, 128, 128};
  int noise_dim = 128;
  int generator_hidden = 512;
  int bottleneck_channels = 128;
  int bottleneck_side = 8;
  std::array<int, 2> upsample_channels{64, 32};
  int max_anchors = 13;
  int grid_side = 32;
  std::array<int, 3> wireframe_channels{32, 64, 128};
  int wireframe_hidden = 256;
  int canvas_side = 128;
  std::array<int, 3> image_channels{32, 64, 128};
  int image_hidden = 128;
  double leaky_slope = 0.2;
  double init_std = 0.02;

  int encoded_dim() const { return encoder_widths.back(); }
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

/// Whether a forward pass registers parameters as trainable leaves.
enum class Bind { Trainable, Frozen };

/// Ordered, named parameter tensors of one network.
class ParamStore {
 public:
  ad::Parameter& add(std::string name, ad::Shape shape);
  ad::Parameter& get(std::string_view name);
  const ad::Parameter& get(std::string_view name) const;
  std::deque<ad::Parameter>& all() { return params_; }
  const std::deque<ad::Parameter>& all() const { return params_; }
  std::size_t count() const;  // scalar parameter count
  void zero_grad();
  ad::Var bind(ad::Tape& tape, std::string_view name, Bind mode);

 private:
  std::deque<ad::Parameter> params_;
};

/// Weights ~ N(0, std^2) from a seeded engine; tensors named "*.bias" and
/// batchnorm shifts are zero, batchnorm scales one.
void init_weights(ParamStore& params, std::uint64_t seed, double std = 0.02);

class Encoder {
 public:
  explicit Encoder(const NetworkConfig& cfg);
  /// (b, 512) -> (b, 128)
  ad::Var forward(ad::Tape& tape, const ad::Var& features, Bind mode);
  ParamStore params;

 private:
  NetworkConfig cfg_;
};

class Generator {
 public:
  explicit Generator(const NetworkConfig& cfg);
  /// (b, 128) encoded features, (b, noise_dim) noise and b anchor counts in
  /// 1..13 -> (b, 1, 32, 32) grids in [0, 1].
  ad::Var forward(ad::Tape& tape, const ad::Var& encoded, const ad::Var& noise, const std::vector<int>& counts,
                  Bind mode, bool training);
  ParamStore params;
  std::array<ad::BatchNormStats<float>, 4> bn_stats;

 private:
  NetworkConfig cfg_;
};

/// Wireframe critic: three strided conv + leaky stages, then linear-leaky-linear. No normalization.
class WireframeCritic {
 public:
  explicit WireframeCritic(const NetworkConfig& cfg);
  /// (b, 1, 32, 32) -> (b)
  ad::Var forward(ad::Tape& tape, const ad::Var& grid, Bind mode);
  ParamStore params;

 private:
  NetworkConfig cfg_;
};

/// Image critic with a learned strided-conv track and a fixed blur pyramid
/// track; every stage after the first convolves the channel concat of both.
class ImageCritic {
 public:
  explicit ImageCritic(const NetworkConfig& cfg);
  /// (b, 3, S, S) with S = canvas_side -> (b)
  ad::Var forward(ad::Tape& tape, const ad::Var& image, Bind mode);
  /// Spatial side of each learned-track stage output.
  std::vector<int> stage_sides() const;
  ParamStore params;

 private:
  NetworkConfig cfg_;
};

/// The four networks plus config.
struct Networks {
  explicit Networks(const NetworkConfig& cfg = {});
  NetworkConfig config;
  Encoder encoder;
  Generator generator;
  WireframeCritic wireframe_critic;
  ImageCritic image_critic;

  void init(std::uint64_t seed);
};

/// One-hot of each count in 1..max broadcast over an s x s plane: (b, max, s, s).
ad::Tensor count_planes(const std::vector<int>& counts, int max_anchors, int side);

// Named tensors are prefixed "encoder.", "generator.", "wireframe_critic.",
// "image_critic."; generator batchnorm statistics as "generator.bnK.running_mean/var".
std::vector<ad::NamedTensor> export_tensors(const Networks& nets, bool generator_only);
void import_tensors(Networks& nets, const std::vector<ad::NamedTensor>& tensors, bool generator_only);

/// Encoder + generator (+ batchnorm statistics) for serving.
void save_generator(const std::filesystem::path& path, const Networks& nets, const nlohmann::json& extra = {});
/// Throws NoCheckpoint when missing and FormatError when the config hash
/// or any tensor shape disagrees.
Networks load_generator(const std::filesystem::path& path);

}  // namespace layoutmuse::nets
