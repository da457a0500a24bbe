#pragma once

#include "dpsmri/checkpoint.hpp"
#include "dpsmri/dataset.hpp"
#include "dpsmri/nn.hpp"

#include <filesystem>
#include <string>

namespace dpsmri::denoise {

inline constexpr int kPatchSize = 20;

struct NoiseEstimate {
  double sigma_hat = 0.0;
  int row = 0, col = 0;  // patch origin
  Shape patch{kPatchSize, kPatchSize};
};

/// Sample standard deviation of the 20x20 corner patch with the lowest mean,
/// taken as background. Throws InvalidArgument for images smaller than the patch.
NoiseEstimate estimate_noise_sigma(const Image& img);
NoiseEstimate estimate_noise_sigma(const phantoms::ImageSample& sample);

struct NoisierPair {
  Image noisier_input;
  Image target;
};

/// noisier_input = pixels + N(0, (multiplier * sigma_hat)^2); target = pixels.
NoisierPair noisier2noise_target(const phantoms::ImageSample& sample, double sigma_hat, std::uint64_t seed,
                                 double multiplier = 1.5);

struct DenoiserConfig {
  nn::UNetConfig net = default_net();
  int epochs = 20;
  int batch_size = 4;
  nn::AdamConfig adam{};
  double noise_multiplier = 1.5;
  /// Apply ((1 + a^2) f(y) - y) / a^2 at inference; off means raw model output.
  bool apply_correction = false;
  std::uint64_t seed = 0;

  static nn::UNetConfig default_net();
};

/// Residual network y + F(y) on the shared U-Net without class conditioning.
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(DenoiserConfig cfg);

  const DenoiserConfig& config() const { return cfg_; }
  const nn::UNet& net() const { return net_; }
  nn::UNet& net() { return net_; }
  checkpoint::TrainingMeta& meta() { return meta_; }
  const checkpoint::TrainingMeta& meta() const { return meta_; }

  /// Raw model output on an arbitrary-size image.
  Image model(const Image& y, nn::ForwardCache* cache = nullptr) const;
  /// Inference-time output (raw or corrected per config).
  Image apply(const Image& y) const;

  std::string hash() const { return checkpoint::weights_hash(net_.params()); }
  void save(const std::filesystem::path& path) const;
  static Denoiser load(const std::filesystem::path& path);

 private:
  DenoiserConfig cfg_;
  nn::UNet net_;
  checkpoint::TrainingMeta meta_;
};

/// Mean squared error of model(noisier) against the original noisy samples.
/// Accumulates the gradient of the returned mean into `grad` when given.
double noisier2noise_loss(const Denoiser& d, std::span<const phantoms::ImageSample> batch,
                          std::span<const double> sigma_hats, std::uint64_t seed,
                          std::vector<double>* grad = nullptr);

Denoiser train_denoiser(const dataset::DatasetManifest& manifest, const DenoiserConfig& cfg);
Denoiser train_denoiser(const std::vector<phantoms::ImageSample>& train, const std::vector<phantoms::ImageSample>& val,
                        const DenoiserConfig& cfg);

/// Writes denoised copies of every sample (clean truth copied alongside) to
/// `out_dir` and returns the new manifest, whose provenance names the source
/// dataset and the checkpoint hash.
dataset::DatasetManifest denoise_dataset(const dataset::DatasetManifest& manifest, const Denoiser& denoiser,
                                         const std::filesystem::path& out_dir);

}  // namespace dpsmri::denoise
