#include "dpsmri/denoise.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace dpsmri;
using namespace dpsmri::denoise;
using dpsmri::testing::random_image;
using dpsmri::testing::TempDir;

namespace {

phantoms::ImageSample noisy_phantom(phantoms::ClassLabel c, Shape s, std::uint64_t seed, double sigma) {
  return phantoms::corrupt_with_noise(phantoms::generate_phantom(c, s, seed), sigma, seed + 1000);
}

DenoiserConfig quick_config() {
  DenoiserConfig cfg;
  cfg.net.base_channels = 4;
  cfg.net.per_level_resolutions = nn::halving_resolutions({32, 32}, 3);
  cfg.epochs = 3;
  cfg.seed = 2;
  return cfg;
}

std::vector<phantoms::ImageSample> small_set(int per_class, std::uint64_t seed0) {
  std::vector<phantoms::ImageSample> v;
  for (auto c : phantoms::kAllClasses) {
    for (int i = 0; i < per_class; ++i) v.push_back(noisy_phantom(c, {32, 40}, seed0 + 31 * i + static_cast<int>(c), 0.05));
  }
  return v;
}

}  // namespace

TEST(EstimateNoiseSigma, ZeroImage) {
  EXPECT_EQ(estimate_noise_sigma(Image::Zero(64, 64)).sigma_hat, 0.0);
}

TEST(EstimateNoiseSigma, PureNoise) {
  const auto e = estimate_noise_sigma(random_image({64, 64}, 3, 0.1));
  EXPECT_NEAR(e.sigma_hat, 0.1, 0.015);
  EXPECT_EQ(e.patch, (Shape{20, 20}));
}

// A bright disc in the middle leaves all four corners as background; the
// darkest corner is picked.
TEST(EstimateNoiseSigma, BrightCentrePicksDarkCorner) {
  Image img = Image::Zero(64, 64);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      if ((r - 32) * (r - 32) + (c - 32) * (c - 32) < 18 * 18) img(r, c) = 0.9;
    }
  }
  img.block(44, 44, 20, 20) += 0.3;  // lift one corner so it is not chosen
  const auto e = estimate_noise_sigma(img + random_image({64, 64}, 4, 0.05));
  EXPECT_GE(e.sigma_hat, 0.035);
  EXPECT_LE(e.sigma_hat, 0.065);
  EXPECT_FALSE(e.row == 44 && e.col == 44);
}

TEST(EstimateNoiseSigma, RejectsSmallImages) {
  EXPECT_THROW(estimate_noise_sigma(Image::Zero(19, 64)), InvalidArgument);
}

// The n-1 normalisation makes the variance estimate unbiased; the std
// estimate is then within a fraction of a percent of sigma.
TEST(EstimateNoiseSigma, UnbiasedOverManyTrials) {
  double var_sum = 0.0;
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const double s = estimate_noise_sigma(random_image({40, 40}, 100 + t, 0.08)).sigma_hat;
    var_sum += s * s;
  }
  EXPECT_NEAR(std::sqrt(var_sum / 1000), 0.08, 0.02 * 0.08);
}

TEST(Noisier2NoiseTarget, ZeroSigmaAndStatistics) {
  phantoms::ImageSample s;
  s.pixels = phantoms::generate_phantom(phantoms::ClassLabel::FseAx, {64, 64}, 1).pixels;
  const auto same = noisier2noise_target(s, 0.0, 3);
  EXPECT_TRUE((same.noisier_input == same.target).all());
  EXPECT_TRUE((same.target == s.pixels).all());

  const auto p = noisier2noise_target(s, 0.04, 3);
  const Image d = p.noisier_input - p.target;
  const double m = d.mean();
  const double sd = std::sqrt((d - m).square().sum() / (d.size() - 1));
  EXPECT_NEAR(sd, 1.5 * 0.04, 0.05 * 1.5 * 0.04);
  EXPECT_TRUE((noisier2noise_target(s, 0.04, 3).noisier_input == p.noisier_input).all());
  EXPECT_FALSE((noisier2noise_target(s, 0.04, 4).noisier_input == p.noisier_input).all());
  EXPECT_THROW(noisier2noise_target(s, -1.0, 3), InvalidArgument);
}

TEST(Denoiser, RejectsClassConditionedNet) {
  DenoiserConfig cfg = quick_config();
  cfg.net.use_class_embedding = true;
  EXPECT_THROW(Denoiser{cfg}, InvalidArgument);
}

TEST(Denoiser, CorrectionFlagChangesOnlyApply) {
  DenoiserConfig cfg = quick_config();
  const Denoiser raw(cfg);
  cfg.apply_correction = true;
  const Denoiser corr(cfg);
  const Image y = random_image({32, 32}, 1, 0.3);
  const Image m = raw.model(y);
  EXPECT_TRUE((raw.apply(y) == m).all());
  const Image expected = (3.25 * m - y) / 2.25;
  EXPECT_LT((corr.apply(y) - expected).abs().maxCoeff(), 1e-12);
}

TEST(TrainDenoiser, EmptyTrainingSplitThrows) {
  EXPECT_THROW(train_denoiser({}, {}, quick_config()), InvalidArgument);
}

TEST(TrainDenoiser, FiniteDecreasingLossAndDeterministic) {
  const auto train = small_set(4, 10), val = small_set(1, 500);
  DenoiserConfig cfg = quick_config();
  cfg.epochs = 6;
  const auto a = train_denoiser(train, val, cfg);
  const auto& curve = a.meta().loss_curve;
  ASSERT_EQ(curve.size(), 7u);
  for (const auto& r : curve) EXPECT_TRUE(std::isfinite(r.val_loss));
  EXPECT_LT(curve.back().val_loss, curve.front().val_loss);
  EXPECT_EQ(a.meta().steps, 6 * 4);
  EXPECT_EQ(train_denoiser(train, val, cfg).hash(), a.hash());
}

TEST(Noisier2NoiseLoss, GradientMatchesFiniteDifferences) {
  Denoiser d(quick_config());
  const auto batch = small_set(1, 7);
  std::vector<double> sig;
  for (const auto& s : batch) sig.push_back(estimate_noise_sigma(s).sigma_hat);
  std::vector<double> grad;
  noisier2noise_loss(d, batch, sig, 5, &grad);
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, d.net().num_params() - 1);
  for (int t = 0; t < 15; ++t) {
    const std::size_t i = pick(rng);
    const double orig = d.net().params()[i], h = 1e-6;
    d.net().params()[i] = orig + h;
    const double up = noisier2noise_loss(d, batch, sig, 5);
    d.net().params()[i] = orig - h;
    const double dn = noisier2noise_loss(d, batch, sig, 5);
    d.net().params()[i] = orig;
    EXPECT_NEAR(grad[i], (up - dn) / (2 * h), 1e-7 + 1e-5 * std::abs(grad[i])) << i;
  }
}

TEST(Denoiser, SaveLoadRoundTrip) {
  TempDir dir;
  const auto d = train_denoiser(small_set(1, 3), {}, quick_config());
  d.save(dir / "den.bin");
  const auto back = Denoiser::load(dir / "den.bin");
  EXPECT_EQ(back.hash(), d.hash());
  EXPECT_EQ(back.meta().loss_curve.size(), d.meta().loss_curve.size());
  const Image y = random_image({50, 36}, 2, 0.2);
  EXPECT_TRUE((back.apply(y) == d.apply(y)).all());
}

TEST(DenoiseDataset, WritesEveryEntryWithProvenance) {
  TempDir src, out1, out2;
  dataset::DatasetConfig dc;
  dc.per_class_counts = {{phantoms::Split::Train, 2}, {phantoms::Split::Val, 1}, {phantoms::Split::Test, 1}};
  const auto man = dataset::build_dataset(dc, src.path());
  const auto d = train_denoiser(man, quick_config());
  const auto a = denoise_dataset(man, d, out1.path());
  const auto b = denoise_dataset(dataset::load_manifest(src.path()), d, out2.path());
  ASSERT_EQ(a.entries.size(), man.entries.size());
  ASSERT_TRUE(a.provenance.has_value());
  EXPECT_EQ(a.provenance->checkpoint_hash, d.hash());
  const auto reloaded = dataset::load_manifest(out1.path());
  ASSERT_TRUE(reloaded.provenance.has_value());
  EXPECT_EQ(reloaded.provenance->checkpoint_hash, d.hash());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& e = a.entries[i];
    EXPECT_EQ(e.id, man.entries[i].id);
    EXPECT_EQ(io::read_text(out1 / e.path), io::read_text(out2 / e.path)) << e.id;
    const Image den = dataset::load_sample(a, e).pixels;
    const Image expect = d.apply(dataset::load_sample(man, man.entries[i]).pixels);
    EXPECT_LT((den - expect).abs().maxCoeff(), 1e-6);
    EXPECT_TRUE((dataset::load_clean(a, e) == dataset::load_clean(man, man.entries[i])).all());
  }
}
