#include "dpsmri/dataset.hpp"
#include "dpsmri/phantoms.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace dpsmri;
using namespace dpsmri::phantoms;
using dpsmri::testing::TempDir;

TEST(ClassLabel, OneHotMapping) {
  EXPECT_EQ(one_hot(ClassLabel::FseAx), (OneHot{1, 0, 0, 0}));
  EXPECT_EQ(one_hot(ClassLabel::FseCor), (OneHot{0, 1, 0, 0}));
  EXPECT_EQ(one_hot(ClassLabel::FseSag), (OneHot{0, 0, 1, 0}));
  EXPECT_EQ(one_hot(ClassLabel::SeAx), (OneHot{0, 0, 0, 1}));
  for (auto c : kAllClasses) {
    EXPECT_EQ(from_one_hot(one_hot(c)), c);
    EXPECT_EQ(parse_class(name(c)), c);
  }
}

TEST(ClassLabel, RejectsNonOneHot) {
  const double two[] = {1, 1, 0, 0};
  const double none[] = {0, 0, 0, 0};
  const double frac[] = {0.5, 0.5, 0, 0};
  const double short_v[] = {1, 0, 0};
  EXPECT_THROW(from_one_hot(two), InvalidArgument);
  EXPECT_THROW(from_one_hot(none), InvalidArgument);
  EXPECT_THROW(from_one_hot(frac), InvalidArgument);
  EXPECT_THROW(from_one_hot(short_v), InvalidArgument);
  EXPECT_THROW(parse_class("T1_AX"), InvalidArgument);
}

TEST(GeneratePhantom, DeterministicAndSeedSensitive) {
  const auto a = generate_phantom(ClassLabel::FseAx, {64, 64}, 7);
  const auto b = generate_phantom(ClassLabel::FseAx, {64, 64}, 7);
  const auto c = generate_phantom(ClassLabel::FseAx, {64, 64}, 8);
  EXPECT_TRUE((a.pixels == b.pixels).all());
  EXPECT_FALSE((a.pixels == c.pixels).all());
}

TEST(GeneratePhantom, RangeAndMetadata) {
  for (auto cls : kAllClasses) {
    for (Shape s : {Shape{48, 64}, Shape{32, 32}, Shape{200, 200}}) {
      const auto p = generate_phantom(cls, s, 3);
      EXPECT_EQ(shape_of(p.pixels), s);
      EXPECT_EQ(p.native_size, s);
      EXPECT_EQ(p.label, cls);
      EXPECT_TRUE(all_finite(p.pixels));
      EXPECT_GE(p.pixels.minCoeff(), 0.0);
      EXPECT_LE(p.pixels.maxCoeff(), 1.0);
      EXPECT_DOUBLE_EQ(p.pixels.maxCoeff(), 1.0);
    }
  }
}

TEST(GeneratePhantom, SizeBounds) {
  EXPECT_THROW(generate_phantom(ClassLabel::FseAx, {31, 64}, 1), InvalidArgument);
  EXPECT_THROW(generate_phantom(ClassLabel::FseAx, {64, 513}, 1), InvalidArgument);
  EXPECT_NO_THROW(generate_phantom(ClassLabel::FseAx, {512, 32}, 1));
}

namespace {

double correlation(const Image& a, const Image& b) {
  const Image da = a - a.mean(), db = b - b.mean();
  return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

}  // namespace

// Class-mean templates from 100 phantoms per class; fresh phantoms must
// correlate best with their own class template.
TEST(GeneratePhantom, ClassSeparabilityByTemplate) {
  const Shape s{64, 64};
  std::array<Image, kNumClasses> tmpl;
  for (int k = 0; k < kNumClasses; ++k) {
    tmpl[k] = Image::Zero(s.rows, s.cols);
    for (int i = 0; i < 100; ++i) tmpl[k] += generate_phantom(kAllClasses[k], s, 1000 + i).pixels;
    tmpl[k] /= 100.0;
  }
  int correct = 0, total = 0;
  std::array<std::array<double, kNumClasses>, kNumClasses> mean_corr{};
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < 50; ++i) {
      const auto p = generate_phantom(kAllClasses[k], s, 50000 + i);
      int best = 0;
      double best_c = -2;
      for (int j = 0; j < kNumClasses; ++j) {
        const double c = correlation(p.pixels, tmpl[j]);
        mean_corr[k][j] += c / 50.0;
        if (c > best_c) {
          best_c = c;
          best = j;
        }
      }
      correct += best == k;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.9);
  for (int k = 0; k < kNumClasses; ++k) {
    for (int j = 0; j < kNumClasses; ++j) {
      if (j == k) continue;
      EXPECT_GT(mean_corr[k][k], mean_corr[k][j]) << "class " << k << " vs " << j;
    }
  }
}

TEST(CorruptWithNoise, ZeroSigmaIsIdentity) {
  const auto p = generate_phantom(ClassLabel::FseCor, {48, 48}, 2);
  const auto n = corrupt_with_noise(p, 0.0, 5);
  EXPECT_TRUE((n.pixels == p.pixels).all());
  ASSERT_TRUE(n.noise_sigma_true.has_value());
  EXPECT_EQ(*n.noise_sigma_true, 0.0);
}

TEST(CorruptWithNoise, EmpiricalStdOnZeroImage) {
  ImageSample z;
  z.pixels = Image::Zero(64, 64);
  z.native_size = {64, 64};
  const auto n = corrupt_with_noise(z, 0.1, 9);
  const double m = n.pixels.mean();
  const double sd = std::sqrt((n.pixels - m).square().sum() / (n.pixels.size() - 1));
  EXPECT_NEAR(sd, 0.1, 0.005);
  // No clipping: zero-mean noise on a zero image must go negative.
  EXPECT_LT(n.pixels.minCoeff(), 0.0);
}

TEST(CorruptWithNoise, SameSeedSameNoiseAndNegativeRejected) {
  const auto p = generate_phantom(ClassLabel::SeAx, {48, 56}, 2);
  EXPECT_TRUE((corrupt_with_noise(p, 0.05, 4).pixels == corrupt_with_noise(p, 0.05, 4).pixels).all());
  EXPECT_THROW(corrupt_with_noise(p, -0.1, 4), InvalidArgument);
}

TEST(ResizeToTrainingGrid, IdentityConstantAndMetadata) {
  auto p = generate_phantom(ClassLabel::FseSag, {200, 200}, 4);
  p.noise_sigma_true = 0.02;
  const auto same = resize_to_training_grid(p);
  EXPECT_TRUE((same.pixels == p.pixels).all());

  ImageSample c;
  c.pixels = Image::Constant(48, 64, 0.6);
  c.native_size = {48, 64};
  c.label = ClassLabel::SeAx;
  c.split = Split::Val;
  const auto r = resize_to_training_grid(c);
  EXPECT_EQ(shape_of(r.pixels), kTrainingGrid);
  EXPECT_NEAR((r.pixels - 0.6).abs().maxCoeff(), 0.0, 1e-14);
  EXPECT_EQ(r.native_size, (Shape{48, 64}));
  EXPECT_EQ(r.label, ClassLabel::SeAx);
  EXPECT_EQ(r.split, Split::Val);
  EXPECT_EQ(shape_of(resize_to_training_grid(c, {56, 56}).pixels), (Shape{56, 56}));
}

TEST(BuildDataset, CountsPerClassAndSplit) {
  TempDir dir;
  dataset::DatasetConfig cfg;
  cfg.per_class_counts = {{Split::Train, 10}, {Split::Val, 0}, {Split::Test, 0}};
  const auto m = dataset::build_dataset(cfg, dir.path());
  EXPECT_EQ(m.entries.size(), 40u);
  for (auto c : kAllClasses) {
    EXPECT_EQ(std::count_if(m.entries.begin(), m.entries.end(), [&](const auto& e) { return e.label == c; }), 10);
  }

  TempDir dir2;
  cfg.per_class_counts = {{Split::Train, 3}, {Split::Val, 2}, {Split::Test, 1}};
  const auto m2 = dataset::build_dataset(cfg, dir2.path());
  EXPECT_EQ(m2.split(Split::Train).size(), 12u);
  EXPECT_EQ(m2.split(Split::Val).size(), 8u);
  EXPECT_EQ(m2.split(Split::Test).size(), 4u);
  std::set<std::string> ids;
  for (const auto& e : m2.entries) EXPECT_TRUE(ids.insert(e.id).second) << "duplicate id " << e.id;
}

TEST(BuildDataset, RoundTripAndDeterminism) {
  TempDir a, b;
  dataset::DatasetConfig cfg;
  cfg.per_class_counts = {{Split::Train, 2}, {Split::Val, 1}, {Split::Test, 1}};
  cfg.seed = 21;
  const auto ma = dataset::build_dataset(cfg, a.path());
  dataset::build_dataset(cfg, b.path());

  const auto reloaded = dataset::load_manifest(a.path());
  EXPECT_EQ(dataset::manifest_to_text(reloaded), dataset::manifest_to_text(ma));
  EXPECT_EQ(io::read_text(a / "manifest.json"), io::read_text(b / "manifest.json"));
  for (const auto& e : ma.entries) {
    EXPECT_EQ(io::read_text(a / e.path), io::read_text(b / e.path)) << e.id;
    const auto s1 = dataset::load_sample(reloaded, reloaded.find(e.id));
    const auto s2 = dataset::load_sample(reloaded, reloaded.find(e.id));
    EXPECT_TRUE((s1.pixels == s2.pixels).all());
    EXPECT_EQ(shape_of(s1.pixels), e.shape);
    EXPECT_EQ(io::file_size(a / e.path), static_cast<std::uintmax_t>(e.shape.size() * 4));
  }
}

TEST(BuildDataset, NoiseGroundTruthWithinFivePercent) {
  TempDir dir;
  dataset::DatasetConfig cfg;
  cfg.sizes = {64};
  cfg.per_class_counts = {{Split::Train, 5}, {Split::Val, 0}, {Split::Test, 0}};
  cfg.seed = 4;
  const auto m = dataset::build_dataset(cfg, dir.path());
  for (const auto& e : m.entries) {
    const Image diff = dataset::load_sample(m, e).pixels - dataset::load_clean(m, e);
    const double mu = diff.mean();
    const double sd = std::sqrt((diff - mu).square().sum() / (diff.size() - 1));
    ASSERT_TRUE(e.noise_sigma_true.has_value());
    EXPECT_NEAR(sd, *e.noise_sigma_true, 0.05 * *e.noise_sigma_true) << e.id;
  }
}

TEST(BuildDataset, UnwritableDirectoryNamesPath) {
  TempDir dir;
  std::ofstream(dir / "blocker") << "x";
  dataset::DatasetConfig cfg;
  const auto target = dir / "blocker" / "ds";
  try {
    dataset::build_dataset(cfg, target);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_EQ(e.path(), target.string());
  }
}

TEST(Io, F32SizeMismatchIsAnError) {
  TempDir dir;
  io::write_f32(dir / "x.f32", Image::Zero(4, 5));
  EXPECT_EQ(io::file_size(dir / "x.f32"), 80u);
  EXPECT_THROW(io::read_f32(dir / "x.f32", {5, 5}), IoError);
  EXPECT_THROW(io::read_f32(dir / "missing.f32", {4, 5}), IoError);
}
