#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dpsmri {

/// Real-valued image, row-major. Rows run along the phase-encode axis.
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Complex = std::complex<double>;
/// Complex k-space array, row-major. Row k holds phase-encode line k.
using KSpace = Eigen::Array<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  int rows = 0;
  int cols = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
  long size() const { return static_cast<long>(rows) * cols; }
};

inline Shape shape_of(const Image& img) {
  return {static_cast<int>(img.rows()), static_cast<int>(img.cols())};
}

std::string to_string(const Shape& s);

// Error taxonomy. The CLI maps ConfigurationError/InvalidArgument/Infeasible to
// exit code 2 and NumericalFailure to exit code 3.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InfeasibleConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::string path)
      : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, int step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

using Rng = std::mt19937_64;

/// Mixes a base seed with stream indices into an independent 64-bit seed
/// (splitmix64 finalizer applied per component).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Image of i.i.d. N(0, sigma^2) draws.
Image gaussian_image(Shape shape, double sigma, Rng& rng);

bool all_finite(const Image& img);

}  // namespace dpsmri
