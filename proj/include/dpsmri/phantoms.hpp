#pragma once

#include "dpsmri/common.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace dpsmri::phantoms {

/// Contrast/orientation class. The declaration order fixes the one-hot index.
enum class ClassLabel { FseAx = 0, FseCor = 1, FseSag = 2, SeAx = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::FseAx, ClassLabel::FseCor, ClassLabel::FseSag, ClassLabel::SeAx};

using OneHot = std::array<double, kNumClasses>;

OneHot one_hot(ClassLabel label);
/// Throws InvalidArgument unless exactly one entry is 1 and the rest are 0.
ClassLabel from_one_hot(std::span<const double> v);
int index_of(ClassLabel label);

std::string_view name(ClassLabel label);
/// Accepts FSE_AX / FSE_COR / FSE_SAG / SE_AX (case-insensitive).
ClassLabel parse_class(std::string_view text);

enum class Split { Train, Val, Test };
std::string_view name(Split split);
Split parse_split(std::string_view text);

struct ImageSample {
  std::string id;
  Image pixels;
  ClassLabel label = ClassLabel::FseAx;
  Shape native_size{};
  std::optional<double> noise_sigma_true;
  Split split = Split::Train;
};

inline constexpr int kMinPhantomSize = 32;
inline constexpr int kMaxPhantomSize = 512;

/// Clean synthetic head-like phantom, max-normalized to [0, 1].
///
/// Each class has its own layout: axial T2 (bright CSF, paired ventricles),
/// coronal T2 (tall head, butterfly ventricles, brainstem), sagittal T2
/// (long axis horizontal, striped cerebellum) and axial T1 (inverted contrast,
/// dark CSF, bright scalp fat). The seed jitters pose, size, fold pattern and
/// intensities. Corners are left as air.
ImageSample generate_phantom(ClassLabel label, Shape size, std::uint64_t seed);

/// Adds i.i.d. N(0, sigma^2) to every pixel without clipping and records sigma.
ImageSample corrupt_with_noise(const ImageSample& sample, double sigma, std::uint64_t seed);

inline constexpr Shape kTrainingGrid{200, 200};

/// Bilinear resize to the model training grid; label and native_size are kept.
ImageSample resize_to_training_grid(const ImageSample& sample, Shape target = kTrainingGrid);

}  // namespace dpsmri::phantoms
