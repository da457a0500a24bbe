#include "dpsmri/dataset.hpp"
#include "dpsmri/operators.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace dpsmri;
using namespace dpsmri::operators;
using dpsmri::testing::random_image;
using dpsmri::testing::rel_err;
using dpsmri::testing::TempDir;

namespace {

// Textbook centred unitary DFT, O(N^2 M^2): X[k, l] with row frequency
// k - floor(H/2) and column frequency l - floor(W/2).
KSpace naive_centered_dft(const Image& x) {
  const int H = static_cast<int>(x.rows()), W = static_cast<int>(x.cols());
  KSpace out(H, W);
  const double norm = 1.0 / std::sqrt(static_cast<double>(H) * W);
  for (int k = 0; k < H; ++k) {
    for (int l = 0; l < W; ++l) {
      const double fk = k - H / 2, fl = l - W / 2;
      Complex acc = 0;
      for (int m = 0; m < H; ++m) {
        for (int n = 0; n < W; ++n) {
          const double ph = -2.0 * std::numbers::pi * (fk * m / H + fl * n / W);
          acc += x(m, n) * Complex(std::cos(ph), std::sin(ph));
        }
      }
      out(k, l) = acc * norm;
    }
  }
  return out;
}

KSpace random_kspace(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  KSpace k(s.rows, s.cols);
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = Complex(n(rng), n(rng));
  return k;
}

SamplingMask mask_from_keep(std::vector<std::uint8_t> keep) {
  SamplingMask m = SamplingMask::full(static_cast<int>(keep.size()));
  m.keep = std::move(keep);
  m.R = acceleration(m);
  return m;
}

}  // namespace

TEST(EchoTrainLayout, InterleavedAndBalanced) {
  for (auto [n, etl] : {std::pair{200, 20}, {60, 12}, {57, 5}, {48, 22}, {64, 64}}) {
    const auto L = EchoTrainLayout::interleaved(n, etl);
    EXPECT_EQ(L.n_trains, (n + etl - 1) / etl);
    std::vector<int> count(static_cast<std::size_t>(L.n_trains), 0);
    for (int j = 0; j < n; ++j) {
      EXPECT_EQ(L.train_of(j), j % L.n_trains);
      count[static_cast<std::size_t>(L.train_of(j))]++;
    }
    for (int c : count) {
      EXPECT_GE(c, n / L.n_trains);
      EXPECT_LE(c, (n + L.n_trains - 1) / L.n_trains);
    }
  }
}

TEST(MakeMask, TwoHundredLinesEtlTwenty) {
  const auto m = make_echo_train_mask(200, 20, 2.0, 1, MaskMode::FSE);
  EXPECT_EQ(m.layout.n_trains, 10);
  EXPECT_EQ(m.kept(), 100);
  EXPECT_EQ(m.R, 2.0);
}

TEST(MakeMask, SingleTrainIsInfeasible) {
  EXPECT_THROW(make_echo_train_mask(64, 64, 1.5, 1, MaskMode::FSE), InfeasibleConfiguration);
}

TEST(MakeMask, TargetOutOfRange) {
  EXPECT_THROW(make_echo_train_mask(64, 8, 1.0, 1, MaskMode::FSE), InvalidArgument);
  EXPECT_THROW(make_echo_train_mask(64, 8, 4.5, 1, MaskMode::FSE), InvalidArgument);
  EXPECT_THROW(make_echo_train_mask(64, 65, 2.0, 1, MaskMode::FSE), InvalidArgument);
  // Three trains of 16/16/16 lines: dropping both others gives R = 3 only.
  EXPECT_THROW(make_echo_train_mask(48, 16, 3.5, 1, MaskMode::FSE), InfeasibleConfiguration);
}

// Brute force over every drop count for equal-size trains: R_d = n / (n - d * etl).
TEST(MakeMask, NearestDropCountByEnumeration) {
  struct Case {
    int n, etl;
    double target;
  };
  for (const auto& c : {Case{60, 12, 1.5}, Case{60, 12, 2.0}, Case{200, 20, 1.5}, Case{64, 4, 1.5},
                        Case{64, 4, 2.0}, Case{48, 6, 1.7}}) {
    const int trains = c.n / c.etl;
    ASSERT_EQ(trains * c.etl, c.n);
    int best_d = -1;
    double best_gap = 1e9, best_R = 0;
    for (int d = 1; d < trains; ++d) {
      const double R = static_cast<double>(c.n) / (c.n - d * c.etl);
      const double gap = std::abs(R - c.target);
      if (gap < best_gap - 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && R > best_R)) {
        best_gap = gap;
        best_d = d;
        best_R = R;
      }
    }
    const auto m = make_echo_train_mask(c.n, c.etl, c.target, 5, MaskMode::FSE);
    EXPECT_EQ(c.n - m.kept(), best_d * c.etl) << c.n << "/" << c.etl << "/" << c.target;
    EXPECT_DOUBLE_EQ(m.R, best_R);
  }
  const auto m = make_echo_train_mask(60, 12, 1.5, 9, MaskMode::FSE);
  EXPECT_NEAR(m.R, 60.0 / 36.0, 1e-12);
}

TEST(MakeMask, TieGoesToHigherR) {
  // Four trains of 10: R_1 = 40/30 = 1.333, R_2 = 2. Target 1.6667 is equidistant.
  const double target = (40.0 / 30.0 + 2.0) / 2.0;
  const auto m = make_echo_train_mask(40, 10, target, 3, MaskMode::FSE);
  EXPECT_DOUBLE_EQ(m.R, 2.0);
}

TEST(MakeMask, ValidityProperties) {
  int checked = 0;
  for (int n : {48, 56, 64, 200}) {
    for (int etl : {3, 4, 5, 6, 12, 20}) {
      for (double target : {1.5, 2.0}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          for (MaskMode mode : {MaskMode::FSE, MaskMode::SE}) {
            SamplingMask m;
            try {
              m = make_echo_train_mask(n, etl, target, seed, mode);
            } catch (const InfeasibleConfiguration&) {
              continue;
            }
            ++checked;
            EXPECT_TRUE(m.keep[static_cast<std::size_t>(n / 2)]);
            EXPECT_DOUBLE_EQ(m.R, static_cast<double>(n) / m.kept());
            EXPECT_DOUBLE_EQ(m.R, acceleration(m));
            EXPECT_LT(m.kept(), n);
            // Whole trains: every line shares its flag with its train's first
            // line, which under interleaving is line number == train index.
            for (int j = 0; j < n; ++j) {
              const int first = m.layout.train_of(j);
              EXPECT_EQ(m.keep[static_cast<std::size_t>(j)], m.keep[static_cast<std::size_t>(first)]);
            }
            if (mode == MaskMode::SE) {
              EXPECT_EQ(m.layout.n_trains, n);
            }
            const auto again = make_echo_train_mask(n, etl, target, seed, mode);
            EXPECT_EQ(again.keep, m.keep);
          }
        }
      }
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(MakeMask, SeedChangesDroppedTrains) {
  const auto a = make_echo_train_mask(64, 4, 2.0, 1, MaskMode::FSE);
  bool any_diff = false;
  for (std::uint64_t s = 2; s < 6 && !any_diff; ++s) {
    any_diff = make_echo_train_mask(64, 4, 2.0, s, MaskMode::FSE).keep != a.keep;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Acceleration, Examples) {
  EXPECT_EQ(acceleration(SamplingMask::full(64)), 1.0);
  std::vector<std::uint8_t> half(200, 0);
  for (int i = 0; i < 100; ++i) half[static_cast<std::size_t>(2 * i)] = 1;
  EXPECT_EQ(acceleration(mask_from_keep(half)), 2.0);
  std::vector<std::uint8_t> k60(60, 0);
  for (int i = 0; i < 36; ++i) k60[static_cast<std::size_t>(i)] = 1;
  EXPECT_NEAR(acceleration(mask_from_keep(k60)), 1.6667, 1e-4);
  EXPECT_NEAR(acceleration(mask_from_keep(k60)), 60.0 / 36.0, 1e-9);
}

TEST(Forward, MatchesNaiveCentredDft) {
  for (Shape s : {Shape{6, 5}, Shape{7, 8}}) {
    const Image x = random_image(s, 2);
    const KSpace got = forward_values(x, SamplingMask::full(s.rows));
    const KSpace want = naive_centered_dft(x);
    EXPECT_LT((got - want).abs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, ParsevalImpulseAndZero) {
  const Image x = random_image({48, 56}, 3);
  const KSpace k = forward_values(x, SamplingMask::full(48));
  EXPECT_LT(rel_err(std::sqrt(k.abs2().sum()), std::sqrt(x.square().sum())), 1e-6);

  Image d = Image::Zero(16, 12);
  d(0, 0) = 1.0;
  const KSpace kd = forward_values(d, SamplingMask::full(16));
  EXPECT_LT((kd.abs() - 1.0 / std::sqrt(16.0 * 12.0)).abs().maxCoeff(), 1e-12);

  const auto mask = make_echo_train_mask(48, 4, 2.0, 1, MaskMode::FSE);
  EXPECT_EQ(forward_values(Image::Zero(48, 56), mask).abs().maxCoeff(), 0.0);
}

TEST(Forward, DcSitsAtCentreRow) {
  const Image c = Image::Constant(10, 9, 2.0);
  const KSpace k = forward_values(c, SamplingMask::full(10));
  EXPECT_NEAR(k(5, 4).real(), 2.0 * std::sqrt(90.0), 1e-12);
  EXPECT_NEAR(k.abs2().sum(), k(5, 4).real() * k(5, 4).real(), 1e-9);
}

TEST(Forward, DroppedRowsAreZeroAndShapeChecked) {
  const auto mask = make_echo_train_mask(56, 4, 1.5, 2, MaskMode::FSE);
  const auto y = forward(random_image({56, 48}, 4), mask);
  for (int r = 0; r < 56; ++r) {
    if (!mask.keep[static_cast<std::size_t>(r)]) {
      EXPECT_EQ(y.values.row(r).abs().maxCoeff(), 0.0);
    }
  }
  EXPECT_THROW(forward(random_image({48, 48}, 4), mask), InvalidArgument);
}

TEST(Forward, Linearity) {
  const auto mask = make_echo_train_mask(64, 5, 2.0, 3, MaskMode::FSE);
  const Image x1 = random_image({64, 48}, 5), x2 = random_image({64, 48}, 6);
  const double a = 0.7, b = -1.9;
  const KSpace lhs = forward_values(a * x1 + b * x2, mask);
  const KSpace rhs = a * forward_values(x1, mask) + b * forward_values(x2, mask);
  EXPECT_LT(std::sqrt((lhs - rhs).abs2().sum() / rhs.abs2().sum()), 1e-6);
}

TEST(Adjoint, InvertsForwardUnderFullSampling) {
  const Image x = random_image({56, 64}, 7);
  const auto full = SamplingMask::full(56);
  EXPECT_LT(rel_err(adjoint(forward(x, full)), x), 1e-6);
  EXPECT_EQ(adjoint(KSpace::Zero(56, 64), full).abs().maxCoeff(), 0.0);
}

TEST(Adjoint, DotProductTestOverRandomTriples) {
  const int sizes[] = {48, 56, 64, 200};
  Rng rng(99);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int H = sizes[rng() % 4], W = sizes[rng() % 4];
    const MaskMode mode = (t % 2) ? MaskMode::SE : MaskMode::FSE;
    const int etl = mode == MaskMode::SE ? 1 : 3 + static_cast<int>(rng() % 4);
    const double target = (t % 3) ? 2.0 : 1.5;
    const auto mask = make_echo_train_mask(H, etl, target, rng(), mode);
    const Image x = random_image({H, W}, rng());
    KSpace y = random_kspace({H, W}, rng());
    for (int r = 0; r < H; ++r) {
      if (!mask.keep[static_cast<std::size_t>(r)]) y.row(r).setZero();
    }
    const double lhs = real_inner(forward_values(x, mask), y);
    const double rhs = (x * adjoint(y, mask)).sum();
    worst = std::max(worst, rel_err(lhs, rhs));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(MeasurementNoise, ZeroSigmaAndDroppedRows) {
  const auto mask = make_echo_train_mask(64, 4, 2.0, 1, MaskMode::FSE);
  const auto y = forward(random_image({64, 64}, 1), mask);
  const auto same = add_measurement_noise(y, 0.0, 3);
  EXPECT_TRUE((same.values == y.values).all());
  const auto noisy = add_measurement_noise(y, 0.1, 3);
  EXPECT_EQ(noisy.noise_sigma_d, 0.1);
  for (int r = 0; r < 64; ++r) {
    if (!mask.keep[static_cast<std::size_t>(r)]) {
      EXPECT_EQ(noisy.values.row(r).abs().maxCoeff(), 0.0);
    }
  }
  EXPECT_THROW(add_measurement_noise(y, -0.1, 3), InvalidArgument);
}

TEST(MeasurementNoise, PerComponentStd) {
  const auto full = SamplingMask::full(64);
  const auto y = forward(Image::Zero(64, 64), full);
  const auto n = add_measurement_noise(y, 0.1, 17);
  const Image re = n.values.real(), im = n.values.imag();
  auto sd = [](const Image& v) { return std::sqrt((v - v.mean()).square().sum() / (v.size() - 1)); };
  EXPECT_NEAR(sd(re), 0.1 / std::sqrt(2.0), 0.05 * 0.1 / std::sqrt(2.0));
  EXPECT_NEAR(sd(im), 0.1 / std::sqrt(2.0), 0.05 * 0.1 / std::sqrt(2.0));
}

TEST(MaskSerialization, RoundTrip) {
  TempDir dir;
  const auto m = make_echo_train_mask(56, 4, 1.5, 8, MaskMode::FSE);
  save_mask(dir / "m.json", m);
  const auto back = load_mask(dir / "m.json");
  EXPECT_EQ(back.keep, m.keep);
  EXPECT_EQ(back.layout.etl, 4);
  EXPECT_EQ(back.layout.assignment, m.layout.assignment);
  EXPECT_EQ(back.seed, 8u);
  EXPECT_EQ(back.mode, MaskMode::FSE);
  EXPECT_DOUBLE_EQ(back.R, m.R);
  EXPECT_EQ(mask_to_text(back), mask_to_text(m));
}

TEST(KSpaceIo, RoundTripIsFloat32) {
  TempDir dir;
  const auto y = forward(random_image({8, 6}, 2), SamplingMask::full(8));
  io::write_c64(dir / "k.c64", y.values);
  EXPECT_EQ(io::file_size(dir / "k.c64"), 8u * 6u * 8u);
  const KSpace back = io::read_c64(dir / "k.c64", {8, 6});
  EXPECT_LT((back - y.values).abs().maxCoeff(), 1e-6);
}
