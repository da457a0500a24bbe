#include "dpsmri/phantoms.hpp"

#include "dpsmri/resample.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace dpsmri::phantoms {

OneHot one_hot(ClassLabel label) {
  OneHot v{};
  v[static_cast<std::size_t>(index_of(label))] = 1.0;
  return v;
}

int index_of(ClassLabel label) { return static_cast<int>(label); }

ClassLabel from_one_hot(std::span<const double> v) {
  if (v.size() != kNumClasses) throw InvalidArgument("one-hot vector must have 4 entries");
  int hot = -1;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k] == 1.0) {
      if (hot >= 0) throw InvalidArgument("one-hot vector has more than one active entry");
      hot = static_cast<int>(k);
    } else if (v[k] != 0.0) {
      throw InvalidArgument("one-hot vector entries must be 0 or 1");
    }
  }
  if (hot < 0) throw InvalidArgument("one-hot vector has no active entry");
  return kAllClasses[static_cast<std::size_t>(hot)];
}

std::string_view name(ClassLabel label) {
  switch (label) {
    case ClassLabel::FseAx: return "FSE_AX";
    case ClassLabel::FseCor: return "FSE_COR";
    case ClassLabel::FseSag: return "FSE_SAG";
    case ClassLabel::SeAx: return "SE_AX";
  }
  return "?";
}

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto& c : out) if (c == '-') c = '_';
  return out;
}

}  // namespace

ClassLabel parse_class(std::string_view text) {
  const std::string u = upper(text);
  for (ClassLabel c : kAllClasses) {
    if (u == name(c)) return c;
  }
  throw InvalidArgument("unknown class label '" + std::string(text) + "'");
}

std::string_view name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw InvalidArgument("unknown split '" + std::string(text) + "'");
}

namespace {

struct Point {
  double x, y;
};

// Ellipse in normalized coordinates, rotated by `theta`; `fold` perturbs the
// boundary radius as 1 + amp * sin(k * phi + phase) to mimic cortical folding.
struct Ellipse {
  double cx, cy, a, b, theta = 0.0;
  double fold_amp = 0.0, fold_k = 0.0, fold_phase = 0.0;

  bool contains(Point p) const {
    const double dx = p.x - cx, dy = p.y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / a;
    const double v = (-s * dx + c * dy) / b;
    double limit = 1.0;
    if (fold_amp != 0.0) {
      const double phi = std::atan2(v, u);
      limit = 1.0 + fold_amp * std::sin(fold_k * phi + fold_phase);
    }
    return u * u + v * v <= limit * limit;
  }
};

struct Layer {
  std::function<bool(Point)> inside;
  std::function<double(Point)> value;
};

class Painter {
 public:
  void add(Ellipse e, double v) {
    layers_.push_back({[e](Point p) { return e.contains(p); }, [v](Point) { return v; }});
  }
  void add(std::function<bool(Point)> inside, std::function<double(Point)> value) {
    layers_.push_back({std::move(inside), std::move(value)});
  }
  double at(Point p) const {
    double v = 0.0;
    for (const auto& l : layers_) {
      if (l.inside(p)) v = l.value(p);
    }
    return v;
  }

 private:
  std::vector<Layer> layers_;
};

struct Jitter {
  Rng& rng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double scale(double v, double rel) { return v * uniform(1.0 - rel, 1.0 + rel); }
};

void paint_fse_axial(Painter& p, Jitter& j) {
  const double two_pi = 2.0 * std::numbers::pi;
  p.add(Ellipse{0, 0, 0.66, 0.74}, j.scale(0.35, 0.08));
  p.add(Ellipse{0, 0, 0.61, 0.69}, j.scale(0.90, 0.05));
  p.add(Ellipse{0, 0, 0.56, 0.64, 0, 0.05, std::round(j.uniform(12, 16)), j.uniform(0, two_pi)},
        j.scale(0.55, 0.06));
  p.add(Ellipse{0, 0.02, 0.41, 0.49, 0, 0.07, std::round(j.uniform(8, 11)), j.uniform(0, two_pi)},
        j.scale(0.38, 0.08));
  const double vb = j.scale(0.22, 0.15), va = j.scale(0.06, 0.15);
  const double csf = j.scale(1.0, 0.03);
  p.add(Ellipse{-0.12, -0.05, va, vb, -0.25}, csf);
  p.add(Ellipse{0.12, -0.05, va, vb, 0.25}, csf);
  const double thal = j.scale(0.50, 0.08);
  p.add(Ellipse{-0.11, 0.24, 0.09, 0.07}, thal);
  p.add(Ellipse{0.11, 0.24, 0.09, 0.07}, thal);
}

void paint_fse_coronal(Painter& p, Jitter& j) {
  const double two_pi = 2.0 * std::numbers::pi;
  p.add(Ellipse{0, -0.02, 0.60, 0.80}, j.scale(0.35, 0.08));
  p.add(Ellipse{0, -0.06, 0.56, 0.72}, j.scale(0.90, 0.05));
  p.add(Ellipse{0, -0.10, 0.52, 0.62, 0, 0.06, std::round(j.uniform(14, 18)), j.uniform(0, two_pi)},
        j.scale(0.55, 0.06));
  p.add(Ellipse{0, -0.12, 0.38, 0.44, 0, 0.07, std::round(j.uniform(9, 12)), j.uniform(0, two_pi)},
        j.scale(0.38, 0.08));
  const double csf = j.scale(1.0, 0.03);
  const double va = j.scale(0.15, 0.15);
  p.add(Ellipse{-0.10, -0.18, va, 0.05, 0.7}, csf);
  p.add(Ellipse{0.10, -0.18, va, 0.05, -0.7}, csf);
  const double temporal = j.scale(0.50, 0.08);
  p.add(Ellipse{-0.34, 0.30, 0.14, 0.12}, temporal);
  p.add(Ellipse{0.34, 0.30, 0.14, 0.12}, temporal);
  p.add(Ellipse{0, 0.46, 0.11, j.scale(0.28, 0.1)}, j.scale(0.45, 0.08));
}

void paint_fse_sagittal(Painter& p, Jitter& j) {
  const double two_pi = 2.0 * std::numbers::pi;
  p.add(Ellipse{0, 0, 0.80, 0.62}, j.scale(0.35, 0.08));
  p.add(Ellipse{0, 0, 0.75, 0.57}, j.scale(0.90, 0.05));
  p.add(Ellipse{-0.06, -0.10, 0.64, 0.42, 0, 0.05, std::round(j.uniform(16, 20)), j.uniform(0, two_pi)},
        j.scale(0.55, 0.06));
  p.add(Ellipse{-0.06, -0.08, 0.46, 0.28, 0, 0.06, std::round(j.uniform(10, 13)), j.uniform(0, two_pi)},
        j.scale(0.38, 0.08));
  // Corpus callosum: a thin dark arc.
  const Ellipse outer{-0.06, 0.02, 0.32, 0.16}, inner{-0.06, 0.05, 0.27, 0.12};
  p.add([outer, inner](Point q) { return outer.contains(q) && !inner.contains(q) && q.y < 0.04; },
        [v = j.scale(0.22, 0.1)](Point) { return v; });
  // Cerebellum with striped folia.
  const Ellipse cb{0.42, 0.36, j.scale(0.22, 0.08), 0.16, -0.3};
  const double freq = j.uniform(34, 42), phase = j.uniform(0, two_pi);
  const double lo = j.scale(0.42, 0.08), hi = j.scale(0.72, 0.05);
  p.add([cb](Point q) { return cb.contains(q); },
        [=](Point q) { return std::sin(freq * (q.y - q.x * 0.3) + phase) > 0 ? hi : lo; });
  p.add(Ellipse{0.14, 0.36, 0.08, 0.24, 0.5}, j.scale(0.45, 0.08));
}

void paint_se_axial(Painter& p, Jitter& j) {
  const double two_pi = 2.0 * std::numbers::pi;
  p.add(Ellipse{0, 0, 0.70, 0.76}, j.scale(1.0, 0.03));
  p.add(Ellipse{0, 0, 0.64, 0.70}, j.scale(0.08, 0.2));
  p.add(Ellipse{0, 0.02, 0.59, 0.65, 0, 0.04, std::round(j.uniform(12, 16)), j.uniform(0, two_pi)},
        j.scale(0.45, 0.06));
  p.add(Ellipse{0, 0.04, 0.44, 0.50, 0, 0.06, std::round(j.uniform(8, 11)), j.uniform(0, two_pi)},
        j.scale(0.72, 0.06));
  const double csf = j.scale(0.10, 0.2);
  const double vb = j.scale(0.25, 0.15);
  p.add(Ellipse{-0.09, 0.02, 0.05, vb, -0.12}, csf);
  p.add(Ellipse{0.09, 0.02, 0.05, vb, 0.12}, csf);
  const double eye = j.scale(0.12, 0.2);
  p.add(Ellipse{-0.24, -0.60, 0.09, 0.08}, eye);
  p.add(Ellipse{0.24, -0.60, 0.09, 0.08}, eye);
}

}  // namespace

ImageSample generate_phantom(ClassLabel label, Shape size, std::uint64_t seed) {
  auto in_range = [](int n) { return n >= kMinPhantomSize && n <= kMaxPhantomSize; };
  if (!in_range(size.rows) || !in_range(size.cols)) {
    throw InvalidArgument("generate_phantom: size " + to_string(size) + " outside [32, 512]");
  }
  Rng rng(derive_seed(seed, 0x9a17, static_cast<std::uint64_t>(index_of(label))));
  Jitter jitter{rng};

  // Global pose: the anatomy is painted in a canonical frame and sampled
  // through a similarity transform.
  const double scale = jitter.uniform(0.93, 1.05);
  const double rot = jitter.uniform(-0.14, 0.14);
  const double tx = jitter.uniform(-0.04, 0.04), ty = jitter.uniform(-0.04, 0.04);

  Painter painter;
  switch (label) {
    case ClassLabel::FseAx: paint_fse_axial(painter, jitter); break;
    case ClassLabel::FseCor: paint_fse_coronal(painter, jitter); break;
    case ClassLabel::FseSag: paint_fse_sagittal(painter, jitter); break;
    case ClassLabel::SeAx: paint_se_axial(painter, jitter); break;
  }

  const double c = std::cos(rot), s = std::sin(rot);
  constexpr int kSuper = 2;
  Image img(size.rows, size.cols);
  for (int r = 0; r < size.rows; ++r) {
    for (int col = 0; col < size.cols; ++col) {
      double acc = 0.0;
      for (int sr = 0; sr < kSuper; ++sr) {
        for (int sc = 0; sc < kSuper; ++sc) {
          const double y = ((r + (sr + 0.5) / kSuper) / size.rows) * 2.0 - 1.0 - ty;
          const double x = ((col + (sc + 0.5) / kSuper) / size.cols) * 2.0 - 1.0 - tx;
          const Point q{(c * x + s * y) / scale, (-s * x + c * y) / scale};
          acc += painter.at(q);
        }
      }
      img(r, col) = acc / (kSuper * kSuper);
    }
  }
  const double peak = img.maxCoeff();
  if (peak > 0) img /= peak;

  ImageSample out;
  out.pixels = std::move(img);
  out.label = label;
  out.native_size = size;
  out.noise_sigma_true = 0.0;
  return out;
}

ImageSample corrupt_with_noise(const ImageSample& sample, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("corrupt_with_noise: sigma must be >= 0");
  ImageSample out = sample;
  if (sigma > 0.0) {
    Rng rng(seed);
    out.pixels += gaussian_image(shape_of(sample.pixels), sigma, rng);
  }
  out.noise_sigma_true = sigma;
  return out;
}

ImageSample resize_to_training_grid(const ImageSample& sample, Shape target) {
  if (sample.pixels.size() == 0 || !all_finite(sample.pixels)) {
    throw InvalidArgument("resize_to_training_grid: invalid sample");
  }
  ImageSample out = sample;
  out.pixels = resize_bilinear(sample.pixels, target);
  if (out.native_size.size() == 0) out.native_size = shape_of(sample.pixels);
  return out;
}

}  // namespace dpsmri::phantoms
