#include "dpsmri/checkpoint.hpp"
#include "dpsmri/dataset.hpp"
#include "dpsmri/nn.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace dpsmri;
using namespace dpsmri::nn;
using dpsmri::testing::random_image;
using dpsmri::testing::rel_err;
using dpsmri::testing::TempDir;

namespace {

UNetConfig small_config(bool with_class) {
  UNetConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2, 2};
  c.per_level_resolutions = halving_resolutions({16, 16}, 3);
  c.embed_dim = 8;
  c.noise_features = 8;
  c.use_class_embedding = with_class;
  return c;
}

// Loss used for the finite-difference checks: <w, F(x)>.
double probe(const UNet& net, const Image& x, const Image& w, const phantoms::OneHot* cls) {
  return (net.forward(x, 0.3, cls) * w).sum();
}

}  // namespace

TEST(UNetConfig, ValidateRejectsBadSettings) {
  auto c = small_config(false);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.base_channels = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.channel_mult = {1, 2};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.per_level_resolutions = {{16, 16}, {16, 16}, {8, 8}};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.noise_features = 7;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(HalvingResolutions, FromTrainingGrid) {
  const auto r = halving_resolutions({48, 48}, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0], (Shape{48, 48}));
  EXPECT_EQ(r[1], (Shape{24, 24}));
  EXPECT_EQ(r[2], (Shape{12, 12}));
}

TEST(NoiseFeatures, BoundedAndDistinct) {
  const Vec a = noise_features(0.1, 16), b = noise_features(-0.4, 16);
  EXPECT_EQ(a.size(), 16);
  EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GT((a - b).norm(), 1e-3);
}

TEST(UNet, SameSeedSameWeights) {
  const UNet a(small_config(false), 3), b(small_config(false), 3), c(small_config(false), 4);
  ASSERT_EQ(a.num_params(), b.num_params());
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST(UNet, AcceptsAnyInputSize) {
  UNetConfig c = small_config(false);
  c.per_level_resolutions = halving_resolutions({48, 48}, 3);
  const UNet net(c, 1);
  for (Shape s : {Shape{48, 48}, Shape{56, 56}, Shape{64, 64}, Shape{200, 200}, Shape{48, 64}}) {
    const Image out = net.forward(random_image(s, 5), 0.0, nullptr);
    EXPECT_EQ(shape_of(out), s);
    EXPECT_TRUE(all_finite(out));
  }
}

TEST(UNet, ClassArgumentMustMatchConfiguration) {
  const UNet plain(small_config(false), 1), cond(small_config(true), 1);
  const Image x = random_image({16, 16}, 2);
  const auto oh = phantoms::one_hot(phantoms::ClassLabel::FseSag);
  EXPECT_THROW(cond.forward(x, 0.0, nullptr), InvalidArgument);
  EXPECT_NO_THROW(cond.forward(x, 0.0, &oh));
  EXPECT_THROW(plain.embed_class(oh), InvalidArgument);
}

TEST(UNet, ClassEmbeddingDistinguishesClasses) {
  const UNet net(small_config(true), 9);
  const Vec e0 = net.embed_class(phantoms::one_hot(phantoms::ClassLabel::FseAx));
  EXPECT_EQ(e0.size(), 8);
  for (int k = 1; k < phantoms::kNumClasses; ++k) {
    const Vec ek = net.embed_class(phantoms::one_hot(phantoms::kAllClasses[k]));
    EXPECT_GT((ek - e0).norm(), 1e-6);
  }
  const double two_hot[] = {1, 1, 0, 0};
  EXPECT_THROW(net.embed_class(two_hot), InvalidArgument);
}

// Central differences against the analytic input gradient, along random
// directions, on a non-square input so level 0 differs from the fixed grid.
TEST(UNet, InputGradientMatchesFiniteDifferences) {
  const UNet net(small_config(true), 21);
  const auto oh = phantoms::one_hot(phantoms::ClassLabel::SeAx);
  const Image x = random_image({18, 14}, 1, 0.5);
  const Image w = random_image({18, 14}, 2);
  ForwardCache cache;
  net.forward(x, 0.3, &oh, &cache);
  const Image g = net.backward(cache, w, nullptr);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Image v = random_image({18, 14}, 100 + k);
    const double h = 1e-5;
    const double fd = (probe(net, x + h * v, w, &oh) - probe(net, x - h * v, w, &oh)) / (2 * h);
    EXPECT_LT(rel_err((g * v).sum(), fd), 1e-6) << "direction " << k;
  }
}

TEST(UNet, ParameterGradientMatchesFiniteDifferences) {
  UNet net(small_config(true), 22);
  const auto oh = phantoms::one_hot(phantoms::ClassLabel::FseCor);
  const Image x = random_image({16, 16}, 3, 0.5);
  const Image w = random_image({16, 16}, 4);
  ForwardCache cache;
  net.forward(x, 0.3, &oh, &cache);
  std::vector<double> grad(net.num_params(), 0.0);
  net.backward(cache, w, &grad);

  Rng rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, net.num_params() - 1);
  int checked = 0;
  for (int t = 0; t < 40; ++t) {
    const std::size_t i = pick(rng);
    const double orig = net.params()[i], h = 1e-5;
    net.params()[i] = orig + h;
    const double up = probe(net, x, w, &oh);
    net.params()[i] = orig - h;
    const double dn = probe(net, x, w, &oh);
    net.params()[i] = orig;
    const double fd = (up - dn) / (2 * h);
    if (std::abs(fd) < 1e-8 && std::abs(grad[i]) < 1e-8) continue;
    EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "param " << i;
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(UNet, BackwardAccumulatesIntoParamGrad) {
  const UNet net(small_config(false), 2);
  const Image x = random_image({16, 16}, 3);
  ForwardCache cache;
  net.forward(x, 0.0, nullptr, &cache);
  std::vector<double> once(net.num_params(), 0.0), twice(net.num_params(), 0.0);
  net.backward(cache, x, &once);
  net.backward(cache, x, &twice);
  net.backward(cache, x, &twice);
  for (std::size_t i = 0; i < once.size(); i += 17) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12 + 1e-12 * std::abs(once[i]));
}

TEST(Adam, LinearWarmup) {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 10;
  const Adam adam(4, cfg);
  EXPECT_DOUBLE_EQ(adam.learning_rate(0), 0.0);
  EXPECT_DOUBLE_EQ(adam.learning_rate(5), 5e-4);
  EXPECT_DOUBLE_EQ(adam.learning_rate(10), 1e-3);
  EXPECT_DOUBLE_EQ(adam.learning_rate(1000), 1e-3);
}

TEST(Adam, MinimizesQuadraticAndIgnoresNonFinite) {
  AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.warmup_steps = 0;
  Adam adam(2, cfg);
  std::vector<double> p{3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g{2 * p[0], 2 * p[1]};
    adam.step(p, g);
  }
  EXPECT_NEAR(p[0], 0.0, 1e-2);
  EXPECT_NEAR(p[1], 0.0, 1e-2);
  const std::vector<double> bad{std::nan(""), INFINITY};
  adam.step(p, bad);
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
}

TEST(Checkpoint, WeightsRoundTripAndHash) {
  TempDir dir;
  const UNet net(small_config(true), 8);
  checkpoint::save_weights(dir / "w.bin", net.params());
  EXPECT_EQ(io::file_size(dir / "w.bin"), net.num_params() * sizeof(double));
  const auto back = checkpoint::load_weights(dir / "w.bin");
  ASSERT_EQ(back.size(), net.num_params());
  EXPECT_TRUE(std::equal(back.begin(), back.end(), net.params().begin()));
  EXPECT_EQ(checkpoint::weights_hash(back), checkpoint::weights_hash(net.params()));
  // SHA-256 of the empty string.
  EXPECT_EQ(checkpoint::sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Checkpoint, ConfigAndMetaJsonRoundTrip) {
  const auto c = small_config(true);
  const auto c2 = checkpoint::unet_config_from_json(checkpoint::to_json(c));
  EXPECT_EQ(checkpoint::to_json(c2).dump(), checkpoint::to_json(c).dump());
  checkpoint::TrainingMeta m;
  m.steps = 12;
  m.seed = 99;
  m.loss_curve = {{0, 2.5, 3.0}, {12, 1.25, 1.5}};
  const auto m2 = checkpoint::training_meta_from_json(checkpoint::to_json(m));
  EXPECT_EQ(m2.steps, 12);
  EXPECT_EQ(m2.seed, 99u);
  ASSERT_EQ(m2.loss_curve.size(), 2u);
  EXPECT_EQ(m2.loss_curve[1].val_loss, 1.5);
  EXPECT_EQ(checkpoint::loss_curve_csv(m.loss_curve), checkpoint::loss_curve_csv(m2.loss_curve));
}

TEST(Checkpoint, TruncatedWeightsFileIsAnError) {
  TempDir dir;
  std::ofstream(dir / "w.bin", std::ios::binary) << "12345";
  EXPECT_THROW(checkpoint::load_weights(dir / "w.bin"), IoError);
}
