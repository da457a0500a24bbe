#include "dpsmri/operators.hpp"

#include "dpsmri/dataset.hpp"

#include <fftw3.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

namespace dpsmri::operators {

EchoTrainLayout EchoTrainLayout::interleaved(int n_lines, int etl) {
  if (n_lines < 1 || etl < 1) throw InvalidArgument("echo train layout: n_lines and etl must be >= 1");
  EchoTrainLayout l;
  l.n_lines = n_lines;
  l.etl = etl;
  l.n_trains = (n_lines + etl - 1) / etl;
  l.assignment.resize(static_cast<std::size_t>(n_lines));
  for (int j = 0; j < n_lines; ++j) l.assignment[static_cast<std::size_t>(j)] = j % l.n_trains;
  return l;
}

std::string to_string(MaskMode mode) { return mode == MaskMode::FSE ? "FSE" : "SE"; }

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "FSE" || text == "fse") return MaskMode::FSE;
  if (text == "SE" || text == "se") return MaskMode::SE;
  throw InvalidArgument("unknown mask mode '" + text + "'");
}

int SamplingMask::kept() const {
  return static_cast<int>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

SamplingMask SamplingMask::full(int n_lines) {
  SamplingMask m;
  m.keep.assign(static_cast<std::size_t>(n_lines), 1);
  m.layout = EchoTrainLayout::interleaved(n_lines, n_lines);
  m.R = 1.0;
  return m;
}

double acceleration(const SamplingMask& mask) {
  const int kept = mask.kept();
  if (kept == 0) throw InvalidArgument("acceleration: mask keeps no lines");
  return static_cast<double>(mask.n_lines()) / kept;
}

SamplingMask make_echo_train_mask(int n_lines, int etl, double target_R, std::uint64_t seed, MaskMode mode) {
  if (!(target_R > 1.0 && target_R <= 4.0)) {
    throw InvalidArgument("make_echo_train_mask: target_R must lie in (1, 4]");
  }
  if (n_lines < 2) throw InvalidArgument("make_echo_train_mask: need at least 2 lines");
  if (mode == MaskMode::FSE && (etl < 1 || etl > n_lines)) {
    throw InvalidArgument("make_echo_train_mask: etl must lie in [1, n_lines]");
  }

  SamplingMask mask;
  mask.layout = EchoTrainLayout::interleaved(n_lines, mode == MaskMode::SE ? 1 : etl);
  mask.seed = seed;
  mask.mode = mode;
  const auto& layout = mask.layout;
  const int centre = layout.train_of(n_lines / 2);

  std::vector<int> train_size(static_cast<std::size_t>(layout.n_trains), 0);
  for (int t : layout.assignment) ++train_size[static_cast<std::size_t>(t)];

  std::vector<int> droppable;
  for (int t = 0; t < layout.n_trains; ++t) {
    if (t != centre) droppable.push_back(t);
  }
  if (droppable.empty()) {
    throw InfeasibleConfiguration("make_echo_train_mask: the only echo train holds the k-space centre");
  }
  Rng rng(seed);
  std::shuffle(droppable.begin(), droppable.end(), rng);

  int best_d = 0;
  double best_gap = 0.0;
  int dropped_lines = 0;
  double r_max = 1.0;
  for (std::size_t d = 1; d <= droppable.size(); ++d) {
    dropped_lines += train_size[static_cast<std::size_t>(droppable[d - 1])];
    const double r = static_cast<double>(n_lines) / (n_lines - dropped_lines);
    r_max = r;
    const double gap = std::abs(r - target_R);
    // Later d means higher R, so accepting equal gaps breaks ties toward higher R.
    if (best_d == 0 || gap <= best_gap + 1e-12) {
      best_d = static_cast<int>(d);
      best_gap = gap;
    }
  }
  if (target_R > r_max * (1.0 + 1e-12)) {
    throw InfeasibleConfiguration("make_echo_train_mask: R=" + std::to_string(target_R) +
                                  " needs dropping the centre train (max reachable " +
                                  std::to_string(r_max) + ")");
  }

  std::vector<std::uint8_t> drop_train(static_cast<std::size_t>(layout.n_trains), 0);
  for (int d = 0; d < best_d; ++d) drop_train[static_cast<std::size_t>(droppable[static_cast<std::size_t>(d)])] = 1;
  mask.keep.resize(static_cast<std::size_t>(n_lines));
  for (int j = 0; j < n_lines; ++j) {
    mask.keep[static_cast<std::size_t>(j)] = drop_train[static_cast<std::size_t>(layout.train_of(j))] ? 0 : 1;
  }
  mask.R = acceleration(mask);
  return mask;
}

namespace {

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(int rows, int cols, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(rows, cols, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    std::vector<Complex> a(static_cast<std::size_t>(rows) * cols), b(a.size());
    fftw_plan p = fftw_plan_dft_2d(rows, cols, reinterpret_cast<fftw_complex*>(a.data()),
                                   reinterpret_cast<fftw_complex*>(b.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

}  // namespace

KSpace fft2c(const Image& x) {
  const int rows = static_cast<int>(x.rows()), cols = static_cast<int>(x.cols());
  std::vector<Complex> in(static_cast<std::size_t>(x.size())), out(in.size());
  for (long k = 0; k < x.size(); ++k) in[static_cast<std::size_t>(k)] = x.data()[k];
  fftw_execute_dft(plans().get(rows, cols, FFTW_FORWARD), reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size()));
  KSpace k(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const int rs = (r + rows / 2) % rows;
    for (int c = 0; c < cols; ++c) {
      const int cs = (c + cols / 2) % cols;
      k(rs, cs) = out[static_cast<std::size_t>(r) * cols + c] * scale;
    }
  }
  return k;
}

Image ifft2c_real(const KSpace& k) {
  const int rows = static_cast<int>(k.rows()), cols = static_cast<int>(k.cols());
  std::vector<Complex> in(static_cast<std::size_t>(k.size())), out(in.size());
  for (int r = 0; r < rows; ++r) {
    const int rs = (r + rows / 2) % rows;
    for (int c = 0; c < cols; ++c) {
      const int cs = (c + cols / 2) % cols;
      in[static_cast<std::size_t>(r) * cols + c] = k(rs, cs);
    }
  }
  fftw_execute_dft(plans().get(rows, cols, FFTW_BACKWARD), reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.size()));
  Image x(rows, cols);
  for (long i = 0; i < x.size(); ++i) x.data()[i] = out[static_cast<std::size_t>(i)].real() * scale;
  return x;
}

namespace {

void apply_mask(KSpace& k, const SamplingMask& mask) {
  for (int r = 0; r < k.rows(); ++r) {
    if (!mask.keep[static_cast<std::size_t>(r)]) k.row(r).setZero();
  }
}

void check_rows(long rows, const SamplingMask& mask, const char* who) {
  if (rows != mask.n_lines()) {
    throw InvalidArgument(std::string(who) + ": image has " + std::to_string(rows) +
                          " phase-encode rows but mask has " + std::to_string(mask.n_lines()));
  }
}

}  // namespace

KSpace forward_values(const Image& x, const SamplingMask& mask) {
  check_rows(x.rows(), mask, "forward");
  KSpace k = fft2c(x);
  apply_mask(k, mask);
  return k;
}

KSpaceMeasurement forward(const Image& x, const SamplingMask& mask) {
  return {forward_values(x, mask), mask, 0.0};
}

Image adjoint(const KSpace& values, const SamplingMask& mask) {
  check_rows(values.rows(), mask, "adjoint");
  KSpace k = values;
  apply_mask(k, mask);
  return ifft2c_real(k);
}

Image adjoint(const KSpaceMeasurement& y) { return adjoint(y.values, y.mask); }

KSpaceMeasurement add_measurement_noise(const KSpaceMeasurement& y, double sigma_d, std::uint64_t seed) {
  if (!(sigma_d >= 0.0)) throw InvalidArgument("add_measurement_noise: sigma_d must be >= 0");
  KSpaceMeasurement out = y;
  out.noise_sigma_d = sigma_d;
  if (sigma_d == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma_d / std::sqrt(2.0));
  for (int r = 0; r < out.values.rows(); ++r) {
    if (!y.mask.keep[static_cast<std::size_t>(r)]) continue;
    for (int c = 0; c < out.values.cols(); ++c) {
      const double re = normal(rng);
      const double im = normal(rng);
      out.values(r, c) += Complex(re, im);
    }
  }
  return out;
}

double real_inner(const KSpace& a, const KSpace& b) {
  double acc = 0.0;
  for (long i = 0; i < a.size(); ++i) {
    acc += a.data()[i].real() * b.data()[i].real() + a.data()[i].imag() * b.data()[i].imag();
  }
  return acc;
}

std::string mask_to_text(const SamplingMask& mask) {
  std::string bits;
  bits.reserve(mask.keep.size());
  for (auto k : mask.keep) bits.push_back(k ? '1' : '0');
  nlohmann::json j;
  j["n_lines"] = mask.n_lines();
  j["etl"] = mask.layout.etl;
  j["keep"] = bits;
  j["seed"] = mask.seed;
  j["mode"] = to_string(mask.mode);
  j["R"] = mask.R;
  return j.dump(2) + "\n";
}

SamplingMask mask_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    SamplingMask m;
    const int n = j.at("n_lines").get<int>();
    const auto bits = j.at("keep").get<std::string>();
    if (static_cast<int>(bits.size()) != n) throw InvalidArgument("mask: keep length differs from n_lines");
    for (char c : bits) {
      if (c != '0' && c != '1') throw InvalidArgument("mask: keep must be a 0/1 string");
      m.keep.push_back(c == '1' ? 1 : 0);
    }
    m.layout = EchoTrainLayout::interleaved(n, j.at("etl").get<int>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mode = parse_mask_mode(j.at("mode").get<std::string>());
    m.R = j.at("R").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed mask: ") + e.what());
  }
}

void save_mask(const std::filesystem::path& path, const SamplingMask& mask) {
  io::write_text(path, mask_to_text(mask));
}

SamplingMask load_mask(const std::filesystem::path& path) { return mask_from_text(io::read_text(path)); }

}  // namespace dpsmri::operators
