#include "dpsmri/common.hpp"

namespace dpsmri {

std::string to_string(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(base) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

Image gaussian_image(Shape shape, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image out(shape.rows, shape.cols);
  for (long k = 0; k < out.size(); ++k) out.data()[k] = sigma * normal(rng);
  return out;
}

bool all_finite(const Image& img) { return img.isFinite().all(); }

}  // namespace dpsmri
