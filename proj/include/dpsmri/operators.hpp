#pragma once

#include "dpsmri/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dpsmri::operators {

/// Phase-encode line to echo-train assignment. Lines are interleaved across
/// trains: line j belongs to train (j mod n_trains), n_trains = ceil(n_lines / etl).
struct EchoTrainLayout {
  int n_lines = 0;
  int etl = 0;
  int n_trains = 0;
  std::vector<int> assignment;

  static EchoTrainLayout interleaved(int n_lines, int etl);
  int train_of(int line) const { return assignment.at(static_cast<std::size_t>(line)); }
};

enum class MaskMode { FSE, SE };
std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& text);

struct SamplingMask {
  std::vector<std::uint8_t> keep;  // one flag per phase-encode line
  EchoTrainLayout layout;
  double R = 1.0;
  std::uint64_t seed = 0;
  MaskMode mode = MaskMode::FSE;

  int n_lines() const { return static_cast<int>(keep.size()); }
  int kept() const;
  static SamplingMask full(int n_lines);
};

struct KSpaceMeasurement {
  KSpace values;
  SamplingMask mask;
  double noise_sigma_d = 0.0;
};

/// Drops whole echo trains (FSE) or single lines (SE) chosen uniformly at
/// random, never the one holding line floor(n_lines / 2) (the k-space centre).
///
/// The non-centre trains are shuffled once by `seed`; dropping the first d of
/// them gives acceleration R_d. The d >= 1 with R_d nearest `target_R` is
/// used, ties going to the higher R. Throws InvalidArgument for
/// target_R outside (1, 4] and InfeasibleConfiguration when only the centre
/// train exists or target_R exceeds what dropping every other train reaches.
SamplingMask make_echo_train_mask(int n_lines, int etl, double target_R, std::uint64_t seed,
                                  MaskMode mode);

/// n_lines / kept lines.
double acceleration(const SamplingMask& mask);

/// Centered unitary 2-D DFT of a real image with unsampled rows zeroed.
/// Row k of k-space holds frequency k - floor(rows / 2).
KSpaceMeasurement forward(const Image& x, const SamplingMask& mask);
/// Same as forward() but returns only the k-space values.
KSpace forward_values(const Image& x, const SamplingMask& mask);
/// Real part of the unitary inverse DFT of the masked k-space. This is the
/// exact adjoint of forward() under the real inner product Re<a, b>.
Image adjoint(const KSpaceMeasurement& y);
Image adjoint(const KSpace& values, const SamplingMask& mask);

/// Adds complex Gaussian noise (each of real/imag with variance sigma_d^2 / 2)
/// on kept rows only.
KSpaceMeasurement add_measurement_noise(const KSpaceMeasurement& y, double sigma_d, std::uint64_t seed);

/// Unitary (un-masked, un-shifted convention matching forward) transforms.
KSpace fft2c(const Image& x);
Image ifft2c_real(const KSpace& k);

/// Re<a, b> summed over all entries.
double real_inner(const KSpace& a, const KSpace& b);

std::string mask_to_text(const SamplingMask& mask);
SamplingMask mask_from_text(const std::string& text);
void save_mask(const std::filesystem::path& path, const SamplingMask& mask);
SamplingMask load_mask(const std::filesystem::path& path);

}  // namespace dpsmri::operators
