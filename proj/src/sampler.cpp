#include "dpsmri/sampler.hpp"

#include <cmath>

namespace dpsmri::sampler {

void SamplerConfig::validate() const {
  if (!(sigma_min > 0 && sigma_min < sigma_max)) throw InvalidArgument("sampler: need 0 < sigma_min < sigma_max");
  if (!(rho > 0)) throw InvalidArgument("sampler: rho must be > 0");
  if (N_t < 2) throw InvalidArgument("sampler: N_t must be >= 2");
  if (N_s < 1) throw InvalidArgument("sampler: N_s must be >= 1");
  if (!(likelihood_eps >= 0)) throw InvalidArgument("sampler: likelihood_eps must be >= 0");
  if (!std::isfinite(guidance_weight)) throw InvalidArgument("sampler: guidance_weight must be finite");
}

double sigma_schedule(int i, const SamplerConfig& cfg) {
  if (i < 0 || i > cfg.N_t + 1) {
    throw InvalidArgument("sigma_schedule: index " + std::to_string(i) + " outside [0, " +
                          std::to_string(cfg.N_t + 1) + "]");
  }
  // Endpoints are returned exactly rather than through the pow round trip.
  if (i == cfg.N_t + 1) return 0.0;
  if (i == 0) return cfg.sigma_max;
  if (i == cfg.N_t) return cfg.sigma_min;
  const double a = std::pow(cfg.sigma_max, 1.0 / cfg.rho);
  const double b = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  return std::pow(a + i * (b - a) / cfg.N_t, cfg.rho);
}

Image analytic_gaussian_denoiser(const Image& mu, const Image& var, const Image& x, double sigma) {
  const double s2 = sigma * sigma;
  return (var * x + s2 * mu) / (var + s2);
}

GaussianPriorDenoiser::GaussianPriorDenoiser(Image mu, Image var) : mu_(std::move(mu)), var_(std::move(var)) {
  if (shape_of(mu_) != shape_of(var_)) throw InvalidArgument("GaussianPriorDenoiser: mu/var shape mismatch");
  if (!(var_ > 0).all()) throw InvalidArgument("GaussianPriorDenoiser: var must be > 0");
}

Image GaussianPriorDenoiser::denoise(const Image& x, double sigma) const {
  if (shape_of(x) != shape_of(mu_)) throw InvalidArgument("GaussianPriorDenoiser: shape mismatch");
  return analytic_gaussian_denoiser(mu_, var_, x, sigma);
}

Image GaussianPriorDenoiser::pullback(const Image& x, double sigma, const std::function<Image(const Image&)>& cotangent,
                                      Image* x_hat) const {
  Image xh = denoise(x, sigma);
  const Image g = cotangent(xh);
  if (x_hat) *x_hat = std::move(xh);
  // The Jacobian is diagonal.
  return g * var_ / (var_ + sigma * sigma);
}

ScoreModelDenoiser::ScoreModelDenoiser(const scorenet::ScoreModel& model, std::optional<phantoms::ClassLabel> cls)
    : model_(model), cls_(cls) {
  if (model_.conditioned() && !cls_) throw InvalidArgument("class-conditioned score model needs a class label");
  if (cls_) one_hot_ = phantoms::one_hot(*cls_);
}

Image ScoreModelDenoiser::denoise(const Image& x, double sigma) const { return model_.denoise(x, sigma, cls_ptr()); }

Image ScoreModelDenoiser::pullback(const Image& x, double sigma, const std::function<Image(const Image&)>& cotangent,
                                   Image* x_hat) const {
  return model_.denoise_pullback(x, sigma, cls_ptr(), cotangent, x_hat);
}

Image dps_step(const Image& x, int i, const operators::KSpaceMeasurement& y, const PriorDenoiser& D,
               const SamplerConfig& cfg) {
  const double t = sigma_schedule(i, cfg);
  const double t_next = sigma_schedule(i + 1, cfg);
  if (!(t > 0)) throw InvalidArgument("dps_step: t_i must be > 0");
  if (shape_of(x) != Shape{static_cast<int>(y.values.rows()), static_cast<int>(y.values.cols())}) {
    throw InvalidArgument("dps_step: image and measurement shapes differ");
  }

  double r = 0.0;
  // Cotangent of r at x_hat: 2 A^T (A x_hat - y).
  auto residual_grad = [&](const Image& xh) -> Image {
    const KSpace res = operators::forward_values(xh, y.mask) - y.values;
    r = res.abs2().sum();
    return 2.0 * operators::adjoint(res, y.mask);
  };
  Image x_hat;
  const Image grad_r = D.pullback(x, t, residual_grad, &x_hat);
  if (!all_finite(x_hat) || !std::isfinite(r)) throw NumericalFailure("non-finite denoiser output", i);

  Image out = x + (x - x_hat) / t * (t_next - t);
  if (r >= cfg.likelihood_eps && r > 0) out -= (cfg.guidance_weight / std::sqrt(r)) * grad_r;
  if (!all_finite(out)) throw NumericalFailure("non-finite iterate", i);
  return out;
}

Image posterior_sample(const operators::KSpaceMeasurement& y, const PriorDenoiser& D, const SamplerConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Image x = gaussian_image({static_cast<int>(y.values.rows()), static_cast<int>(y.values.cols())}, cfg.sigma_max, rng);
  for (int i = 1; i <= cfg.N_t; ++i) x = dps_step(x, i, y, D, cfg);
  return x;
}

std::uint64_t sample_seed(const SamplerConfig& cfg, int k) {
  return derive_seed(cfg.seed, 0x5a4d504c, static_cast<std::uint64_t>(k));
}

Image mean_of(std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("mean_of: no images");
  Image acc = images[0];
  for (std::size_t k = 1; k < images.size(); ++k) acc += images[k];
  return acc / static_cast<double>(images.size());
}

Image stddev_of(std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("stddev_of: no images");
  // Deviations are taken about the first image so identical inputs give an
  // exact zero instead of rounding noise from the mean.
  const Image& ref = images[0];
  Image shift = Image::Zero(ref.rows(), ref.cols()), sq = Image::Zero(ref.rows(), ref.cols());
  for (const auto& im : images) {
    const Image d = im - ref;
    shift += d;
    sq += d.square();
  }
  const double n = static_cast<double>(images.size());
  shift /= n;
  return (sq / n - shift.square()).max(0.0).sqrt();
}

PosteriorResult reconstruct(const operators::KSpaceMeasurement& y, const PriorDenoiser& D, const SamplerConfig& cfg,
                            const ReconstructOptions& opts) {
  cfg.validate();
  std::vector<Image> samples;
  samples.reserve(static_cast<std::size_t>(cfg.N_s));
  for (int k = 0; k < cfg.N_s; ++k) {
    samples.push_back(posterior_sample(y, D, cfg, opts.forced_sample_seed.value_or(sample_seed(cfg, k))));
  }
  PosteriorResult res;
  res.mean_image = mean_of(samples);
  if (opts.compute_stddev) res.stddev_map = stddev_of(samples);
  if (opts.keep_samples) res.samples = std::move(samples);
  return res;
}

}  // namespace dpsmri::sampler
