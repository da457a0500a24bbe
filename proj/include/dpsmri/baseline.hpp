#pragma once

#include "dpsmri/operators.hpp"

#include <vector>

namespace dpsmri::baseline {

struct CSConfig {
  double lambda = 1e-2;
  int n_iters = 100;
  int wavelet_levels = 3;
  /// Gradient step; A has unit norm so (0, 1] guarantees descent, (1, 2) still converges.
  double step_size = 1.0;
  /// FISTA momentum. Off gives plain ISTA, whose objective never increases.
  bool accelerate = true;

  void validate() const;
};

/// sign(v) max(|v| - lambda, 0).
double soft_threshold(double v, double lambda);

/// Orthonormal multi-level 2-D Haar transform. Each level splits the current
/// approximation block into [approx | detail] along rows and columns; an odd
/// trailing sample passes through to the approximation half unchanged. The
/// coarsest approximation block sits in the top-left corner.
class Haar2D {
 public:
  Haar2D(Shape shape, int levels);

  Image forward(const Image& x) const;
  Image inverse(const Image& c) const;
  /// Size of the coarsest approximation block.
  Shape coarse_block() const { return blocks_.back(); }
  Shape shape() const { return blocks_.front(); }

 private:
  std::vector<Shape> blocks_;  // approximation block before each level, plus the final one
};

struct CSResult {
  Image image;
  /// Objective 0.5 ||Ax - y||^2 + lambda ||Wx||_1 (coarse block excluded) after each iteration.
  std::vector<double> objective;
};

double cs_objective(const Image& x, const operators::KSpaceMeasurement& y, const Haar2D& W, double lambda);

/// Proximal gradient on 0.5 ||Ax - y||^2 + lambda ||Wx||_1 starting from the
/// zero-filled image. Throws NumericalFailure on a non-finite iterate.
CSResult l1_wavelet_reconstruct_traced(const operators::KSpaceMeasurement& y, const CSConfig& cfg);
Image l1_wavelet_reconstruct(const operators::KSpaceMeasurement& y, const CSConfig& cfg);

/// Candidate lambdas 1e-4 .. 1e-1, three per decade.
std::vector<double> default_lambda_grid();

}  // namespace dpsmri::baseline
