#include "dpsmri/nn.hpp"

#include <cmath>
#include <cstring>

namespace dpsmri::nn {

void UNetConfig::validate() const {
  if (base_channels < 1) throw InvalidArgument("UNetConfig: base_channels must be >= 1");
  if (depth() < 2) throw InvalidArgument("UNetConfig: need at least two levels");
  if (channel_mult.size() != per_level_resolutions.size()) {
    throw InvalidArgument("UNetConfig: channel_mult and per_level_resolutions differ in length");
  }
  for (std::size_t l = 1; l < per_level_resolutions.size(); ++l) {
    const Shape a = per_level_resolutions[l - 1], b = per_level_resolutions[l];
    if (!(b.rows < a.rows && b.cols < a.cols) || b.rows < 1 || b.cols < 1) {
      throw InvalidArgument("UNetConfig: per_level_resolutions must be strictly decreasing");
    }
  }
  for (int m : channel_mult) {
    if (m < 1) throw InvalidArgument("UNetConfig: channel multipliers must be >= 1");
  }
  if (embed_dim < 4) throw InvalidArgument("UNetConfig: embed_dim must be >= 4");
  if (noise_features < 2 || noise_features % 2) throw InvalidArgument("UNetConfig: noise_features must be even");
}

std::vector<Shape> halving_resolutions(Shape grid, int depth) {
  std::vector<Shape> out;
  Shape s = grid;
  for (int l = 0; l < depth; ++l) {
    out.push_back(s);
    s = {std::max(1, s.rows / 2), std::max(1, s.cols / 2)};
  }
  return out;
}

Vec noise_features(double c_noise, int n) {
  const int half = n / 2;
  Vec f(n);
  for (int k = 0; k < half; ++k) {
    const double t = half > 1 ? static_cast<double>(k) / (half - 1) : 0.0;
    const double freq = 0.5 * std::pow(128.0, t);
    f(k) = std::cos(freq * c_noise);
    f(half + k) = std::sin(freq * c_noise);
  }
  return f;
}

namespace {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& a) {
  return (1.0 + (-a).exp()).inverse();
}

Mat silu(const Mat& a) {
  Mat out(a.rows(), a.cols());
  out.array() = a.array() * sigmoid(a.array());
  return out;
}

Vec silu(const Vec& a) { return (a.array() * sigmoid(a.array())).matrix(); }

// d/da silu(a), multiplied into g.
Mat silu_backward(const Mat& a, const Mat& g) {
  Mat out(a.rows(), a.cols());
  auto s = sigmoid(a.array()).eval();
  out.array() = g.array() * s * (1.0 + a.array() * (1.0 - s));
  return out;
}

Vec silu_backward(const Vec& a, const Vec& g) {
  auto s = sigmoid(a.array()).eval();
  return (g.array() * s * (1.0 + a.array() * (1.0 - s))).matrix();
}

// 3x3 zero-padded patches: row (ci * 9 + ky * 3 + kx), column y * W + x.
Mat im2col3(const Mat& in, Shape s) {
  const int C = static_cast<int>(in.rows()), H = s.rows, W = s.cols;
  Mat cols(C * 9, static_cast<long>(H) * W);
  for (int ci = 0; ci < C; ++ci) {
    const double* src = in.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(ci * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < H; ++y) {
          double* d = dst + static_cast<long>(y) * W;
          const int ys = y + dy;
          if (ys < 0 || ys >= H) {
            std::memset(d, 0, sizeof(double) * static_cast<std::size_t>(W));
            continue;
          }
          const double* srow = src + static_cast<long>(ys) * W;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int x = 0; x < x0; ++x) d[x] = 0.0;
          std::memcpy(d + x0, srow + x0 + dx, sizeof(double) * static_cast<std::size_t>(x1 - x0));
          for (int x = x1; x < W; ++x) d[x] = 0.0;
        }
      }
    }
  }
  return cols;
}

Mat col2im3(const Mat& cols, int C, Shape s) {
  const int H = s.rows, W = s.cols;
  Mat out = Mat::Zero(C, static_cast<long>(H) * W);
  for (int ci = 0; ci < C; ++ci) {
    double* dst = out.row(ci).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(ci * 9 + ky * 3 + kx).data();
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < H; ++y) {
          const int ys = y + dy;
          if (ys < 0 || ys >= H) continue;
          const double* srow = src + static_cast<long>(y) * W;
          double* drow = dst + static_cast<long>(ys) * W;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
        }
      }
    }
  }
  return out;
}

Mat resample_channels(const Mat& in, const Resampler& r) {
  Mat out(in.rows(), r.to().size());
  for (long c = 0; c < in.rows(); ++c) r.apply(in.row(c).data(), out.row(c).data());
  return out;
}

Mat resample_channels_transpose(const Mat& g, const Resampler& r) {
  Mat out(g.rows(), r.from().size());
  for (long c = 0; c < g.rows(); ++c) r.apply_transpose(g.row(c).data(), out.row(c).data());
  return out;
}

}  // namespace

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i] = init_scale_[i] == 0.0 ? 0.0 : init_scale_[i] * normal(rng);
  }
  init_scale_.clear();
  init_scale_.shrink_to_fit();
}

void UNet::set_params(std::vector<double> p) {
  if (p.size() != params_.size()) {
    throw InvalidArgument("UNet::set_params: expected " + std::to_string(params_.size()) +
                          " parameters, got " + std::to_string(p.size()));
  }
  params_ = std::move(p);
}

std::size_t UNet::alloc(std::size_t n) {
  const std::size_t off = params_.size();
  params_.resize(off + n, 0.0);
  init_scale_.resize(off + n, 0.0);
  return off;
}

Conv2d UNet::make_conv(int cin, int cout, int k) {
  Conv2d c{cin, cout, k};
  const std::size_t nw = static_cast<std::size_t>(cout) * cin * k * k;
  c.w = alloc(nw);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  std::fill(init_scale_.begin() + static_cast<long>(c.w), init_scale_.end(), scale);
  c.b = alloc(static_cast<std::size_t>(cout));
  return c;
}

Linear UNet::make_linear(int in, int out) {
  Linear l{in, out};
  l.w = alloc(static_cast<std::size_t>(in) * out);
  std::fill(init_scale_.begin() + static_cast<long>(l.w), init_scale_.end(), 1.0 / std::sqrt(static_cast<double>(in)));
  l.b = alloc(static_cast<std::size_t>(out));
  return l;
}

void UNet::build() {
  const int L = config_.depth();
  const int E = config_.embed_dim;
  auto scale_last = [this](const Conv2d& c, double factor) {
    const std::size_t n = static_cast<std::size_t>(c.cout) * c.cin * c.k * c.k;
    for (std::size_t i = 0; i < n; ++i) init_scale_[c.w + i] *= factor;
  };
  auto make_block = [&](int cin, int cout) {
    ResBlock rb;
    rb.conv1 = make_conv(cin, cout, 3);
    rb.emb_proj = make_linear(E, cout);
    rb.conv2 = make_conv(cout, cout, 3);
    scale_last(rb.conv2, 0.3);
    if (cin != cout) rb.skip = make_conv(cin, cout, 1);
    return rb;
  };

  conv_in_ = make_conv(1, config_.channels(0), 3);
  noise_fc1_ = make_linear(config_.noise_features, E);
  noise_fc2_ = make_linear(E, E);
  if (config_.use_class_embedding) {
    class_fc1_ = make_linear(phantoms::kNumClasses, E);
    class_fc2_ = make_linear(E, E);
  }
  enc_.clear();
  enc_.push_back(make_block(config_.channels(0), config_.channels(0)));
  for (int l = 1; l < L; ++l) enc_.push_back(make_block(config_.channels(l - 1), config_.channels(l)));
  mid_ = make_block(config_.channels(L - 1), config_.channels(L - 1));
  dec_.clear();
  for (int l = 0; l + 1 < L; ++l) {
    dec_.push_back(make_block(config_.channels(l + 1) + config_.channels(l), config_.channels(l)));
  }
  conv_out_ = make_conv(config_.channels(0), 1, 3);
  scale_last(conv_out_, 0.2);
}

Mat UNet::conv_forward(const Conv2d& c, const Mat& in, Shape shape) const {
  Eigen::Map<const Mat> W(params_.data() + c.w, c.cout, static_cast<long>(c.cin) * c.k * c.k);
  Eigen::Map<const Vec> b(params_.data() + c.b, c.cout);
  Mat out(c.cout, shape.size());
  if (c.k == 1) {
    out.noalias() = W * in;
  } else {
    out.noalias() = W * im2col3(in, shape);
  }
  out.colwise() += b;
  return out;
}

Mat UNet::conv_backward(const Conv2d& c, const Mat& in, Shape shape, const Mat& g_out,
                        std::vector<double>* grad) const {
  const long K = static_cast<long>(c.cin) * c.k * c.k;
  Eigen::Map<const Mat> W(params_.data() + c.w, c.cout, K);
  if (grad) {
    Eigen::Map<Mat> gW(grad->data() + c.w, c.cout, K);
    Eigen::Map<Vec> gb(grad->data() + c.b, c.cout);
    if (c.k == 1) {
      gW.noalias() += g_out * in.transpose();
    } else {
      gW.noalias() += g_out * im2col3(in, shape).transpose();
    }
    gb += g_out.rowwise().sum();
  }
  Mat g_cols(K, shape.size());
  g_cols.noalias() = W.transpose() * g_out;
  if (c.k == 1) return g_cols;
  return col2im3(g_cols, c.cin, shape);
}

Mat UNet::resblock_forward(const ResBlock& rb, const Mat& h, Shape shape, const Vec& emb_act,
                           ResBlockCache* cache) const {
  Mat a0 = silu(h);
  Mat a1 = conv_forward(rb.conv1, a0, shape);
  Eigen::Map<const Mat> Wp(params_.data() + rb.emb_proj.w, rb.emb_proj.out, rb.emb_proj.in);
  Eigen::Map<const Vec> bp(params_.data() + rb.emb_proj.b, rb.emb_proj.out);
  const Vec shift = Wp * emb_act + bp;
  a1.colwise() += shift;
  Mat a2 = silu(a1);
  Mat out = conv_forward(rb.conv2, a2, shape);
  if (rb.skip) {
    out += conv_forward(*rb.skip, h, shape);
  } else {
    out += h;
  }
  if (cache) {
    cache->h = h;
    cache->a0 = std::move(a0);
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
    cache->shape = shape;
  }
  return out;
}

Mat UNet::resblock_backward(const ResBlock& rb, const ResBlockCache& c, const Mat& g_out,
                            const Vec& emb_act, Vec* g_emb_act, std::vector<double>* grad) const {
  Mat g_h = rb.skip ? conv_backward(*rb.skip, c.h, c.shape, g_out, grad) : g_out;
  Mat g_a2 = conv_backward(rb.conv2, c.a2, c.shape, g_out, grad);
  Mat g_a1 = silu_backward(c.a1, g_a2);
  if (grad) {
    const Vec g_shift = g_a1.rowwise().sum();
    Eigen::Map<Mat> gW(grad->data() + rb.emb_proj.w, rb.emb_proj.out, rb.emb_proj.in);
    Eigen::Map<Vec> gb(grad->data() + rb.emb_proj.b, rb.emb_proj.out);
    gW.noalias() += g_shift * emb_act.transpose();
    gb += g_shift;
    if (g_emb_act) {
      Eigen::Map<const Mat> Wp(params_.data() + rb.emb_proj.w, rb.emb_proj.out, rb.emb_proj.in);
      *g_emb_act += Wp.transpose() * g_shift;
    }
  }
  Mat g_a0 = conv_backward(rb.conv1, c.a0, c.shape, g_a1, grad);
  g_h += silu_backward(c.h, g_a0);
  return g_h;
}

Vec UNet::embedding(double c_noise, const phantoms::OneHot* cls, ForwardCache* cache) const {
  auto lin = [this](const Linear& l, const Vec& v) {
    Eigen::Map<const Mat> W(params_.data() + l.w, l.out, l.in);
    Eigen::Map<const Vec> b(params_.data() + l.b, l.out);
    return Vec(W * v + b);
  };
  if (config_.use_class_embedding && !cls) {
    throw InvalidArgument("network is class-conditioned: a class one-hot vector is required");
  }
  Vec f = noise_features(c_noise, config_.noise_features);
  Vec h_pre = lin(noise_fc1_, f);
  Vec e = lin(noise_fc2_, silu(h_pre));
  Vec c_in, c_pre;
  if (config_.use_class_embedding) {
    phantoms::from_one_hot(*cls);
    c_in = Eigen::Map<const Vec>(cls->data(), phantoms::kNumClasses);
    c_pre = lin(class_fc1_, c_in);
    e += lin(class_fc2_, silu(c_pre));
  }
  Vec act = silu(e);
  if (cache) {
    cache->noise_feat = std::move(f);
    cache->noise_hidden_pre = std::move(h_pre);
    cache->emb = e;
    cache->emb_act = act;
    cache->has_class = config_.use_class_embedding;
    cache->class_in = std::move(c_in);
    cache->class_hidden_pre = std::move(c_pre);
  }
  return act;
}

void UNet::embedding_backward(const ForwardCache& c, const Vec& g_emb_act, std::vector<double>& grad) const {
  auto lin_back = [this, &grad](const Linear& l, const Vec& in, const Vec& g) {
    Eigen::Map<const Mat> W(params_.data() + l.w, l.out, l.in);
    Eigen::Map<Mat> gW(grad.data() + l.w, l.out, l.in);
    Eigen::Map<Vec> gb(grad.data() + l.b, l.out);
    gW.noalias() += g * in.transpose();
    gb += g;
    return Vec(W.transpose() * g);
  };
  const Vec g_e = silu_backward(c.emb, g_emb_act);
  const Vec g_h = lin_back(noise_fc2_, silu(c.noise_hidden_pre), g_e);
  lin_back(noise_fc1_, c.noise_feat, silu_backward(c.noise_hidden_pre, g_h));
  if (c.has_class) {
    const Vec g_c = lin_back(class_fc2_, silu(c.class_hidden_pre), g_e);
    lin_back(class_fc1_, c.class_in, silu_backward(c.class_hidden_pre, g_c));
  }
}

Vec UNet::embed_class(std::span<const double> one_hot) const {
  if (!config_.use_class_embedding) throw InvalidArgument("embed_class: network has no class embedding");
  phantoms::from_one_hot(one_hot);
  Eigen::Map<const Vec> v(one_hot.data(), phantoms::kNumClasses);
  Eigen::Map<const Mat> W1(params_.data() + class_fc1_.w, class_fc1_.out, class_fc1_.in);
  Eigen::Map<const Vec> b1(params_.data() + class_fc1_.b, class_fc1_.out);
  Eigen::Map<const Mat> W2(params_.data() + class_fc2_.w, class_fc2_.out, class_fc2_.in);
  Eigen::Map<const Vec> b2(params_.data() + class_fc2_.b, class_fc2_.out);
  return W2 * silu(Vec(W1 * v + b1)) + b2;
}

Image UNet::forward(const Image& x, double c_noise, const phantoms::OneHot* cls, ForwardCache* cache) const {
  const int L = config_.depth();
  const Shape S = shape_of(x);
  if (S.rows < 1 || S.cols < 1) throw InvalidArgument("UNet::forward: empty input");
  const Vec emb_act = embedding(c_noise, cls, cache);

  std::vector<Shape> shapes(static_cast<std::size_t>(L));
  shapes[0] = S;
  for (int l = 1; l < L; ++l) shapes[static_cast<std::size_t>(l)] = config_.per_level_resolutions[static_cast<std::size_t>(l)];

  Mat xin = Eigen::Map<const Mat>(x.data(), 1, S.size());
  std::vector<Mat> enc_out(static_cast<std::size_t>(L));
  std::vector<ResBlockCache> enc_c(static_cast<std::size_t>(L)), dec_c(static_cast<std::size_t>(L - 1));
  ResBlockCache mid_c;
  const bool keep = cache != nullptr;

  Mat h = conv_forward(conv_in_, xin, S);
  enc_out[0] = resblock_forward(enc_[0], h, S, emb_act, keep ? &enc_c[0] : nullptr);
  for (int l = 1; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat d = resample_channels(enc_out[ul - 1], Resampler(shapes[ul - 1], shapes[ul]));
    enc_out[ul] = resblock_forward(enc_[ul], d, shapes[ul], emb_act, keep ? &enc_c[ul] : nullptr);
  }
  Mat u = resblock_forward(mid_, enc_out[static_cast<std::size_t>(L - 1)], shapes[static_cast<std::size_t>(L - 1)],
                           emb_act, keep ? &mid_c : nullptr);
  for (int l = L - 2; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat up = resample_channels(u, Resampler(shapes[ul + 1], shapes[ul]));
    Mat cat(up.rows() + enc_out[ul].rows(), up.cols());
    cat << up, enc_out[ul];
    u = resblock_forward(dec_[ul], cat, shapes[ul], emb_act, keep ? &dec_c[ul] : nullptr);
  }
  Mat out = conv_forward(conv_out_, silu(u), S);

  if (cache) {
    cache->input_shape = S;
    cache->x = std::move(xin);
    cache->enc = std::move(enc_c);
    cache->mid = std::move(mid_c);
    cache->dec = std::move(dec_c);
    cache->enc_out.clear();
    cache->level_shape = shapes;
    cache->out_pre = std::move(u);
  }
  Image result(S.rows, S.cols);
  Eigen::Map<Mat>(result.data(), 1, S.size()) = out;
  return result;
}

Image UNet::backward(const ForwardCache& c, const Image& g_out, std::vector<double>* grad) const {
  const int L = config_.depth();
  const Shape S = c.input_shape;
  if (shape_of(g_out) != S) throw InvalidArgument("UNet::backward: gradient shape mismatch");
  if (grad && grad->size() != params_.size()) grad->assign(params_.size(), 0.0);
  const auto& shapes = c.level_shape;
  Vec g_emb = Vec::Zero(config_.embed_dim);
  Vec* g_emb_ptr = grad ? &g_emb : nullptr;

  Mat g = Eigen::Map<const Mat>(g_out.data(), 1, S.size());
  Mat g_u = silu_backward(c.out_pre, conv_backward(conv_out_, silu(c.out_pre), S, g, grad));

  std::vector<Mat> g_enc(static_cast<std::size_t>(L));
  for (int l = 0; l + 1 < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat g_cat = resblock_backward(dec_[ul], c.dec[ul], g_u, c.emb_act, g_emb_ptr, grad);
    const long c_up = config_.channels(l + 1);
    g_enc[ul] = g_cat.bottomRows(g_cat.rows() - c_up);
    g_u = resample_channels_transpose(g_cat.topRows(c_up), Resampler(shapes[ul + 1], shapes[ul]));
  }
  {
    const auto last = static_cast<std::size_t>(L - 1);
    Mat g_mid_in = resblock_backward(mid_, c.mid, g_u, c.emb_act, g_emb_ptr, grad);
    g_enc[last] = g_enc[last].size() ? Mat(g_enc[last] + g_mid_in) : g_mid_in;
  }
  for (int l = L - 1; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat g_d = resblock_backward(enc_[ul], c.enc[ul], g_enc[ul], c.emb_act, g_emb_ptr, grad);
    g_enc[ul - 1] += resample_channels_transpose(g_d, Resampler(shapes[ul - 1], shapes[ul]));
  }
  Mat g_h = resblock_backward(enc_[0], c.enc[0], g_enc[0], c.emb_act, g_emb_ptr, grad);
  Mat g_x = conv_backward(conv_in_, c.x, S, g_h, grad);
  if (grad) embedding_backward(c, g_emb, *grad);

  Image result(S.rows, S.cols);
  Eigen::Map<Mat>(result.data(), 1, S.size()) = g_x;
  return result;
}

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

double Adam::learning_rate(int step) const {
  if (cfg_.warmup_steps <= 0) return cfg_.lr;
  return cfg_.lr * std::min(1.0, static_cast<double>(step) / cfg_.warmup_steps);
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw InvalidArgument("Adam::step: size mismatch");
  ++t_;
  const double lr = learning_rate(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const double g = std::isfinite(grad[i]) ? grad[i] : 0.0;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
  }
}

}  // namespace dpsmri::nn
