#include "dpsmri/resample.hpp"

#include <algorithm>
#include <cmath>

namespace dpsmri {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd interpolation_matrix(int n_in, int n_out) {
  if (n_in < 1 || n_out < 1) throw InvalidArgument("interpolation_matrix: sizes must be positive");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_out, n_in);
  const double scale = static_cast<double>(n_in) / n_out;
  for (int i = 0; i < n_out; ++i) {
    double src = std::max(0.0, (i + 0.5) * scale - 0.5);
    int i0 = std::min(static_cast<int>(std::floor(src)), n_in - 1);
    int i1 = std::min(i0 + 1, n_in - 1);
    double frac = src - i0;
    m(i, i0) += 1.0 - frac;
    m(i, i1) += frac;
  }
  return m;
}

Resampler::Resampler(Shape from, Shape to) : from_(from), to_(to), identity_(from == to) {
  if (!identity_) {
    ry_ = interpolation_matrix(from.rows, to.rows);
    rx_ = interpolation_matrix(from.cols, to.cols);
  }
}

void Resampler::apply(const double* in, double* out) const {
  Eigen::Map<const RowMat> x(in, from_.rows, from_.cols);
  Eigen::Map<RowMat> y(out, to_.rows, to_.cols);
  if (identity_) {
    y = x;
    return;
  }
  y.noalias() = ry_ * x * rx_.transpose();
}

void Resampler::apply_transpose(const double* in, double* out) const {
  Eigen::Map<const RowMat> g(in, to_.rows, to_.cols);
  Eigen::Map<RowMat> y(out, from_.rows, from_.cols);
  if (identity_) {
    y = g;
    return;
  }
  y.noalias() = ry_.transpose() * g * rx_;
}

Image Resampler::apply(const Image& in) const {
  if (shape_of(in) != from_) throw InvalidArgument("Resampler: input shape mismatch");
  Image out(to_.rows, to_.cols);
  apply(in.data(), out.data());
  return out;
}

Image resize_bilinear(const Image& in, Shape target) {
  if (target.rows < 1 || target.cols < 1) throw InvalidArgument("resize_bilinear: empty target");
  return Resampler(shape_of(in), target).apply(in);
}

Image resample_feature_grid(const Image& features, Shape target) {
  const Shape src = shape_of(features);
  auto valid = [](int t, int s) { return t >= 1 && t <= 4 * s; };
  if (!valid(target.rows, src.rows) || !valid(target.cols, src.cols)) {
    throw InvalidArgument("resample_feature_grid: target " + to_string(target) +
                          " outside [1, 4x] of source " + to_string(src));
  }
  return resize_bilinear(features, target);
}

}  // namespace dpsmri
