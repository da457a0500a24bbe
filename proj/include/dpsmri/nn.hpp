#pragma once

#include "dpsmri/common.hpp"
#include "dpsmri/phantoms.hpp"
#include "dpsmri/resample.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

// Minimal CPU network used by both the self-supervised denoiser and the score
// model: a small U-Net whose deeper levels live on fixed grids reached by
// bilinear resampling, so the same weights accept any input matrix size.
// Forward passes are const and keep all state in a caller-owned cache; the
// backward pass yields the input gradient and, optionally, parameter
// gradients.
namespace dpsmri::nn {

/// Feature maps: one row per channel, each row a row-major plane.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct UNetConfig {
  int base_channels = 8;
  std::vector<int> channel_mult{1, 2, 2};
  /// Level 0 is the training grid (informational: level 0 always runs at the
  /// input's own size); levels >= 1 are the fixed grids the encoder resamples to.
  std::vector<Shape> per_level_resolutions{{48, 48}, {24, 24}, {12, 12}};
  int embed_dim = 64;
  int noise_features = 16;
  bool use_class_embedding = false;

  int depth() const { return static_cast<int>(per_level_resolutions.size()); }
  int channels(int level) const { return base_channels * channel_mult.at(static_cast<std::size_t>(level)); }
  /// Throws InvalidArgument on inconsistent settings.
  void validate() const;
};

/// Halving schedule from the training grid, e.g. 48x48 -> {48, 24, 12}.
std::vector<Shape> halving_resolutions(Shape training_grid, int depth);

struct Conv2d {
  int cin = 0, cout = 0, k = 3;
  std::size_t w = 0, b = 0;  // parameter offsets
};

struct Linear {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;
};

struct ResBlock {
  Conv2d conv1, conv2;
  Linear emb_proj;
  std::optional<Conv2d> skip;
};

struct ResBlockCache {
  Mat h, a0, a1, a2;
  Shape shape;
};

struct ForwardCache {
  Shape input_shape;
  Vec noise_feat, noise_hidden_pre, emb, emb_act;
  Vec class_in, class_hidden_pre;
  bool has_class = false;
  Mat x;                      // network input (1 x HW)
  std::vector<ResBlockCache> enc;
  ResBlockCache mid;
  std::vector<ResBlockCache> dec;  // dec[l] produces level-l output, l = 0..depth-2
  std::vector<Mat> enc_out;
  std::vector<Shape> level_shape;
  Mat out_pre;  // input to the final SiLU
};

class UNet {
 public:
  UNet() = default;
  /// Builds the layer layout and draws initial weights from `seed`.
  UNet(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }
  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  void set_params(std::vector<double> p);

  /// Raw network F(x, c_noise, class). `cls` must be given iff class embedding
  /// is enabled. Pass a cache to enable backward().
  Image forward(const Image& x, double c_noise, const phantoms::OneHot* cls,
                ForwardCache* cache = nullptr) const;

  /// Gradient of <g_out, F> with respect to the input. When `param_grad` is
  /// non-null the parameter gradient is accumulated into it.
  Image backward(const ForwardCache& cache, const Image& g_out, std::vector<double>* param_grad) const;

  /// Output of the class-embedding network for a one-hot vector.
  Vec embed_class(std::span<const double> one_hot) const;

 private:
  void build();
  Vec embedding(double c_noise, const phantoms::OneHot* cls, ForwardCache* cache) const;
  void embedding_backward(const ForwardCache& cache, const Vec& g_emb_act, std::vector<double>& grad) const;

  Mat resblock_forward(const ResBlock& rb, const Mat& h, Shape shape, const Vec& emb_act,
                       ResBlockCache* cache) const;
  Mat resblock_backward(const ResBlock& rb, const ResBlockCache& cache, const Mat& g_out,
                        const Vec& emb_act, Vec* g_emb_act, std::vector<double>* grad) const;

  Mat conv_forward(const Conv2d& c, const Mat& in, Shape shape) const;
  Mat conv_backward(const Conv2d& c, const Mat& in, Shape shape, const Mat& g_out,
                    std::vector<double>* grad) const;

  std::size_t alloc(std::size_t n);
  Conv2d make_conv(int cin, int cout, int k);
  Linear make_linear(int in, int out);

  UNetConfig config_;
  std::vector<double> params_;
  std::vector<double> init_scale_;  // per-parameter init std, used once by the constructor

  Conv2d conv_in_, conv_out_;
  Linear noise_fc1_, noise_fc2_, class_fc1_, class_fc2_;
  std::vector<ResBlock> enc_;  // enc_[l] for level l
  ResBlock mid_;
  std::vector<ResBlock> dec_;  // dec_[l] for level l, l = 0..depth-2
};

/// Sinusoidal features of the scalar noise conditioning input.
Vec noise_features(double c_noise, int n_features);

/// Adam with a linear learning-rate warmup: lr(step) = lr * min(step / warmup, 1).
struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 50;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg);
  double learning_rate(int step) const;
  /// One update; non-finite gradient entries are treated as zero.
  void step(std::span<double> params, std::span<const double> grad);
  int steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

}  // namespace dpsmri::nn
