#pragma once

#include "dpsmri/checkpoint.hpp"
#include "dpsmri/dataset.hpp"
#include "dpsmri/nn.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dpsmri::scorenet {

/// Which data a score model sees and whether it is class-conditioned.
enum class Regime { PerClass, All, AllEmbed };
std::string to_string(Regime r);
Regime parse_regime(const std::string& text);

struct ScoreModelConfig {
  nn::UNetConfig net;
  double sigma_data = 0.5;
  double P_mean = -1.2;
  double P_std = 1.2;

  void validate() const;
};

/// Desk-scale default: halving resolutions from the training grid, embedding
/// enabled according to the regime.
ScoreModelConfig default_score_config(Shape training_grid, Regime regime, int base_channels = 8, int embed_dim = 64);

/// Preconditioning coefficients of the denoiser D(x; sigma).
struct Preconditioning {
  double c_skip, c_out, c_in, c_noise;
};
Preconditioning precondition(double sigma, double sigma_data);

/// EDM loss weight (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.
double loss_weight(double sigma, double sigma_data);

struct TrainingItem {
  Image x;
  phantoms::ClassLabel label = phantoms::ClassLabel::FseAx;
};

class ScoreModel {
 public:
  ScoreModel() = default;
  ScoreModel(ScoreModelConfig config, Regime regime, std::optional<phantoms::ClassLabel> cls, std::uint64_t seed);

  const ScoreModelConfig& config() const { return config_; }
  Regime regime() const { return regime_; }
  std::optional<phantoms::ClassLabel> trained_class() const { return class_; }
  bool conditioned() const { return config_.net.use_class_embedding; }
  const nn::UNet& net() const { return net_; }
  nn::UNet& net() { return net_; }
  checkpoint::TrainingMeta& meta() { return meta_; }
  const checkpoint::TrainingMeta& meta() const { return meta_; }
  /// Classes the model was trained on.
  std::vector<phantoms::ClassLabel> classes() const;

  /// D(x; sigma, C) = c_skip x + c_out F(c_in x, c_noise, embed(C)).
  /// Throws InvalidArgument for sigma <= 0 or a missing class on a
  /// class-conditioned model. `cls` is ignored by unconditioned models.
  Image denoise(const Image& x, double sigma, const phantoms::OneHot* cls) const;

  /// Computes x_hat = D(x; sigma, C), then returns J_D(x)^T g where
  /// g = cotangent(x_hat). One forward and one backward pass.
  Image denoise_pullback(const Image& x, double sigma, const phantoms::OneHot* cls,
                         const std::function<Image(const Image&)>& cotangent, Image* x_hat = nullptr) const;

  nn::Vec embed_class(std::span<const double> one_hot) const { return net_.embed_class(one_hot); }

  std::string hash() const { return checkpoint::weights_hash(net_.params()); }
  void save(const std::filesystem::path& path) const;
  static ScoreModel load(const std::filesystem::path& path);

 private:
  ScoreModelConfig config_;
  Regime regime_ = Regime::All;
  std::optional<phantoms::ClassLabel> class_;
  nn::UNet net_;
  checkpoint::TrainingMeta meta_;
};

using DenoiseFn = std::function<Image(const Image& noisy, double sigma, const TrainingItem& item)>;

/// Mean over the batch of lambda(sigma) * ||D(x + n; sigma, C) - x||^2 with
/// ln(sigma) ~ N(P_mean, P_std^2) and n ~ N(0, sigma^2 I), drawn from `seed`.
double edm_loss(std::span<const TrainingItem> batch, const DenoiseFn& denoiser, const ScoreModelConfig& cfg,
                std::uint64_t seed);
/// Same loss for a network; accumulates d(loss)/d(params) into `grad` if given.
double edm_loss(std::span<const TrainingItem> batch, const ScoreModel& model, std::uint64_t seed,
                std::vector<double>* grad = nullptr);

struct ScoreTrainConfig {
  Regime regime = Regime::AllEmbed;
  std::optional<phantoms::ClassLabel> cls;  // required for PerClass
  Shape training_grid{48, 48};
  int base_channels = 8;
  int embed_dim = 64;
  int steps = 400;
  int batch_size = 4;
  int eval_every = 25;
  nn::AdamConfig adam{};
  bool flip_augment = false;
  std::uint64_t seed = 0;
};

/// Loads and resizes the regime's training/validation items.
std::vector<TrainingItem> load_items(const dataset::DatasetManifest& manifest, phantoms::Split split, Regime regime,
                                     std::optional<phantoms::ClassLabel> cls, Shape grid);

ScoreModel train_score_model(const dataset::DatasetManifest& manifest, const ScoreTrainConfig& cfg);
ScoreModel train_score_model(const std::vector<TrainingItem>& train, const std::vector<TrainingItem>& val,
                             const ScoreTrainConfig& cfg);

}  // namespace dpsmri::scorenet
