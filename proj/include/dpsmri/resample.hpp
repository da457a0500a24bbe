#pragma once

#include "dpsmri/common.hpp"

#include <Eigen/Dense>

namespace dpsmri {

/// Dense 1-D bilinear interpolation weights, shape (n_out, n_in).
///
/// Half-pixel (align-corners-false) convention: output sample i sits at source
/// coordinate (i + 0.5) * n_in / n_out - 0.5, clamped to [0, n_in - 1].
/// Each row has at most two nonzero weights summing to 1, so constants are
/// preserved in both directions.
Eigen::MatrixXd interpolation_matrix(int n_in, int n_out);

/// Separable 2-D bilinear resampling between two fixed grids. Applying it is
/// linear in the input; apply_transpose() is its exact adjoint, which the
/// network backward pass relies on.
class Resampler {
 public:
  Resampler() = default;
  Resampler(Shape from, Shape to);

  Shape from() const { return from_; }
  Shape to() const { return to_; }

  /// `in` is one plane stored row-major in a contiguous buffer of from().size().
  void apply(const double* in, double* out) const;
  void apply_transpose(const double* in, double* out) const;

  Image apply(const Image& in) const;

 private:
  Shape from_{}, to_{};
  Eigen::MatrixXd ry_;  // to.rows x from.rows
  Eigen::MatrixXd rx_;  // to.cols x from.cols
  bool identity_ = true;
};

/// Bilinear resize of an image to an arbitrary target size (no ratio limit).
Image resize_bilinear(const Image& in, Shape target);

/// Bilinear resampling of a feature plane, as used between U-Net levels.
/// Throws InvalidArgument unless 1 <= target <= 4 * source on each axis.
Image resample_feature_grid(const Image& features, Shape target);

}  // namespace dpsmri
