#include "dpsmri/baseline.hpp"

#include <cmath>

namespace dpsmri::baseline {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// One Haar level on a strided 1-D run of length n, in place via scratch.
void haar_fwd_1d(double* v, int n, int stride, std::vector<double>& tmp) {
  if (n < 2) return;
  const int pairs = n / 2;
  const int n_approx = n - pairs;
  tmp.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < pairs; ++k) {
    const double a = v[(2 * k) * stride], b = v[(2 * k + 1) * stride];
    tmp[static_cast<std::size_t>(k)] = (a + b) * kInvSqrt2;
    tmp[static_cast<std::size_t>(n_approx + k)] = (a - b) * kInvSqrt2;
  }
  if (n % 2) tmp[static_cast<std::size_t>(pairs)] = v[(n - 1) * stride];
  for (int k = 0; k < n; ++k) v[k * stride] = tmp[static_cast<std::size_t>(k)];
}

void haar_inv_1d(double* v, int n, int stride, std::vector<double>& tmp) {
  if (n < 2) return;
  const int pairs = n / 2;
  const int n_approx = n - pairs;
  tmp.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < pairs; ++k) {
    const double a = v[k * stride], d = v[(n_approx + k) * stride];
    tmp[static_cast<std::size_t>(2 * k)] = (a + d) * kInvSqrt2;
    tmp[static_cast<std::size_t>(2 * k + 1)] = (a - d) * kInvSqrt2;
  }
  if (n % 2) tmp[static_cast<std::size_t>(n - 1)] = v[pairs * stride];
  for (int k = 0; k < n; ++k) v[k * stride] = tmp[static_cast<std::size_t>(k)];
}

}  // namespace

void CSConfig::validate() const {
  if (!(lambda >= 0)) throw InvalidArgument("CSConfig: lambda must be >= 0");
  if (n_iters < 1) throw InvalidArgument("CSConfig: n_iters must be >= 1");
  if (wavelet_levels < 1) throw InvalidArgument("CSConfig: wavelet_levels must be >= 1");
  if (!(step_size > 0 && step_size <= 2)) throw InvalidArgument("CSConfig: step_size must be in (0, 2]");
}

double soft_threshold(double v, double lambda) {
  const double m = std::abs(v) - lambda;
  return m > 0 ? std::copysign(m, v) : 0.0;
}

Haar2D::Haar2D(Shape shape, int levels) {
  if (shape.rows < 1 || shape.cols < 1) throw InvalidArgument("Haar2D: empty shape");
  if (levels < 1) throw InvalidArgument("Haar2D: levels must be >= 1");
  blocks_.push_back(shape);
  for (int l = 0; l < levels; ++l) {
    const Shape s = blocks_.back();
    if (s.rows < 2 && s.cols < 2) break;
    blocks_.push_back({(s.rows + 1) / 2, (s.cols + 1) / 2});
  }
}

Image Haar2D::forward(const Image& x) const {
  if (shape_of(x) != shape()) throw InvalidArgument("Haar2D: shape mismatch");
  Image c = x;
  const int W = static_cast<int>(c.cols());
  std::vector<double> tmp;
  for (std::size_t l = 0; l + 1 < blocks_.size(); ++l) {
    const Shape s = blocks_[l];
    for (int r = 0; r < s.rows; ++r) haar_fwd_1d(c.data() + static_cast<long>(r) * W, s.cols, 1, tmp);
    for (int col = 0; col < s.cols; ++col) haar_fwd_1d(c.data() + col, s.rows, W, tmp);
  }
  return c;
}

Image Haar2D::inverse(const Image& coeffs) const {
  if (shape_of(coeffs) != shape()) throw InvalidArgument("Haar2D: shape mismatch");
  Image c = coeffs;
  const int W = static_cast<int>(c.cols());
  std::vector<double> tmp;
  for (std::size_t l = blocks_.size() - 1; l-- > 0;) {
    const Shape s = blocks_[l];
    for (int col = 0; col < s.cols; ++col) haar_inv_1d(c.data() + col, s.rows, W, tmp);
    for (int r = 0; r < s.rows; ++r) haar_inv_1d(c.data() + static_cast<long>(r) * W, s.cols, 1, tmp);
  }
  return c;
}

namespace {

double l1_excluding_coarse(const Image& c, Shape coarse) {
  return c.abs().sum() - c.topLeftCorner(coarse.rows, coarse.cols).abs().sum();
}

}  // namespace

double cs_objective(const Image& x, const operators::KSpaceMeasurement& y, const Haar2D& W, double lambda) {
  const KSpace res = operators::forward_values(x, y.mask) - y.values;
  return 0.5 * res.abs2().sum() + lambda * l1_excluding_coarse(W.forward(x), W.coarse_block());
}

CSResult l1_wavelet_reconstruct_traced(const operators::KSpaceMeasurement& y, const CSConfig& cfg) {
  cfg.validate();
  const Shape shape{static_cast<int>(y.values.rows()), static_cast<int>(y.values.cols())};
  const Haar2D W(shape, cfg.wavelet_levels);
  const Shape coarse = W.coarse_block();
  const double thr = cfg.step_size * cfg.lambda;

  Image x = operators::adjoint(y);
  Image z = x;
  double t = 1.0;
  CSResult out;
  out.objective.reserve(static_cast<std::size_t>(cfg.n_iters));
  for (int it = 0; it < cfg.n_iters; ++it) {
    const KSpace res = operators::forward_values(z, y.mask) - y.values;
    Image c = W.forward(z - cfg.step_size * operators::adjoint(res, y.mask));
    for (int r = 0; r < c.rows(); ++r) {
      for (int k = 0; k < c.cols(); ++k) {
        if (r < coarse.rows && k < coarse.cols) continue;
        c(r, k) = soft_threshold(c(r, k), thr);
      }
    }
    Image x_next = W.inverse(c);
    if (!all_finite(x_next)) throw NumericalFailure("non-finite L1-wavelet iterate", it);
    if (cfg.accelerate) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = x_next + ((t - 1.0) / t_next) * (x_next - x);
      t = t_next;
    } else {
      z = x_next;
    }
    x = std::move(x_next);
    out.objective.push_back(cs_objective(x, y, W, cfg.lambda));
  }
  out.image = std::move(x);
  return out;
}

Image l1_wavelet_reconstruct(const operators::KSpaceMeasurement& y, const CSConfig& cfg) {
  return l1_wavelet_reconstruct_traced(y, cfg).image;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int e = -4; e <= -2; ++e) {
    const double base = std::pow(10.0, e);
    for (double m : {1.0, 2.0, 5.0}) g.push_back(m * base);
  }
  g.push_back(1e-1);
  return g;
}

}  // namespace dpsmri::baseline
