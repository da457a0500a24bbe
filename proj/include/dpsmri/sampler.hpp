#pragma once

#include "dpsmri/operators.hpp"
#include "dpsmri/phantoms.hpp"
#include "dpsmri/scorenet.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace dpsmri::sampler {

struct SamplerConfig {
  double sigma_min = 0.002;
  double sigma_max = 5.0;
  double rho = 7.0;
  int N_t = 450;
  int N_s = 5;
  /// d_L is zeroed when the residual energy r falls below this.
  double likelihood_eps = 1e-12;
  /// Scalar on d_L. 1 reproduces the plain -grad(r)/sqrt(r) step.
  double guidance_weight = 1.0;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Noise level t_i of the Karras discretization for 0 <= i <= N_t, and 0 for
/// i = N_t + 1.
double sigma_schedule(int i, const SamplerConfig& cfg);

/// A denoiser D(x; sigma) with a vector-Jacobian product. Class conditioning,
/// if any, is bound into the implementation. Implementations must be safe to
/// call concurrently.
class PriorDenoiser {
 public:
  virtual ~PriorDenoiser() = default;
  virtual Image denoise(const Image& x, double sigma) const = 0;
  /// Computes x_hat = D(x; sigma) and returns J_D(x)^T cotangent(x_hat).
  virtual Image pullback(const Image& x, double sigma, const std::function<Image(const Image&)>& cotangent,
                         Image* x_hat) const = 0;
};

/// Conjugate-Gaussian posterior mean (var x + sigma^2 mu) / (var + sigma^2),
/// elementwise.
Image analytic_gaussian_denoiser(const Image& mu, const Image& var, const Image& x, double sigma);

/// Exact denoiser for the prior N(mu, diag(var)).
class GaussianPriorDenoiser final : public PriorDenoiser {
 public:
  GaussianPriorDenoiser(Image mu, Image var);
  Image denoise(const Image& x, double sigma) const override;
  Image pullback(const Image& x, double sigma, const std::function<Image(const Image&)>& cotangent,
                 Image* x_hat) const override;
  const Image& mu() const { return mu_; }
  const Image& var() const { return var_; }

 private:
  Image mu_, var_;
};

/// Adapts a trained score model with an optional class label.
class ScoreModelDenoiser final : public PriorDenoiser {
 public:
  ScoreModelDenoiser(const scorenet::ScoreModel& model, std::optional<phantoms::ClassLabel> cls);
  Image denoise(const Image& x, double sigma) const override;
  Image pullback(const Image& x, double sigma, const std::function<Image(const Image&)>& cotangent,
                 Image* x_hat) const override;

 private:
  const phantoms::OneHot* cls_ptr() const { return cls_ ? &one_hot_ : nullptr; }

  const scorenet::ScoreModel& model_;
  std::optional<phantoms::ClassLabel> cls_;
  phantoms::OneHot one_hot_{};
};

/// One update x_{i} -> x_{i+1}: prior Euler step plus the normalized
/// likelihood gradient taken through the denoiser. Throws NumericalFailure
/// (carrying i) on non-finite values.
Image dps_step(const Image& x, int i, const operators::KSpaceMeasurement& y, const PriorDenoiser& D,
               const SamplerConfig& cfg);

/// x_0 ~ N(0, sigma_max^2 I) from `sample_seed`, then dps_step for i = 1..N_t.
/// Deterministic given the seed.
Image posterior_sample(const operators::KSpaceMeasurement& y, const PriorDenoiser& D, const SamplerConfig& cfg,
                       std::uint64_t sample_seed);

/// Seed of posterior sample k under cfg.seed.
std::uint64_t sample_seed(const SamplerConfig& cfg, int k);

struct PosteriorResult {
  Image mean_image;
  std::vector<Image> samples;
  std::optional<Image> stddev_map;
};

struct ReconstructOptions {
  bool keep_samples = false;
  bool compute_stddev = false;
  /// Testing hook: when set, every sample uses this seed instead of the derived one.
  std::optional<std::uint64_t> forced_sample_seed;
};

/// Runs N_s posterior samples and averages them. The population standard
/// deviation is returned when requested.
PosteriorResult reconstruct(const operators::KSpaceMeasurement& y, const PriorDenoiser& D, const SamplerConfig& cfg,
                            const ReconstructOptions& opts = {});

/// Per-pixel mean and population standard deviation of a set of images.
Image mean_of(std::span<const Image> images);
Image stddev_of(std::span<const Image> images);

}  // namespace dpsmri::sampler
