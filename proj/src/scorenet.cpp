#include "dpsmri/scorenet.hpp"

#include <cmath>

namespace dpsmri::scorenet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Regime r) {
  switch (r) {
    case Regime::PerClass: return "per-class";
    case Regime::All: return "all";
    case Regime::AllEmbed: return "all-embed";
  }
  return "?";
}

Regime parse_regime(const std::string& text) {
  if (text == "per-class") return Regime::PerClass;
  if (text == "all") return Regime::All;
  if (text == "all-embed") return Regime::AllEmbed;
  throw InvalidArgument("unknown regime '" + text + "' (expected per-class, all or all-embed)");
}

void ScoreModelConfig::validate() const {
  net.validate();
  if (!(sigma_data > 0)) throw InvalidArgument("ScoreModelConfig: sigma_data must be > 0");
  if (!(P_std > 0)) throw InvalidArgument("ScoreModelConfig: P_std must be > 0");
}

ScoreModelConfig default_score_config(Shape grid, Regime regime, int base_channels, int embed_dim) {
  ScoreModelConfig c;
  c.net.base_channels = base_channels;
  c.net.channel_mult = {1, 2, 2};
  c.net.per_level_resolutions = nn::halving_resolutions(grid, 3);
  c.net.embed_dim = embed_dim;
  c.net.use_class_embedding = regime == Regime::AllEmbed;
  return c;
}

Preconditioning precondition(double sigma, double sd) {
  const double s2 = sigma * sigma, d2 = sd * sd;
  return {d2 / (s2 + d2), sigma * sd / std::sqrt(s2 + d2), 1.0 / std::sqrt(s2 + d2), std::log(sigma) / 4.0};
}

double loss_weight(double sigma, double sd) { return (sigma * sigma + sd * sd) / ((sigma * sd) * (sigma * sd)); }

ScoreModel::ScoreModel(ScoreModelConfig config, Regime regime, std::optional<phantoms::ClassLabel> cls,
                       std::uint64_t seed)
    : config_(std::move(config)), regime_(regime), class_(cls) {
  config_.validate();
  if (regime == Regime::PerClass && !cls) throw InvalidArgument("per-class regime needs a class");
  if ((regime == Regime::AllEmbed) != config_.net.use_class_embedding) {
    throw InvalidArgument("class embedding must be enabled exactly for the all-embed regime");
  }
  net_ = nn::UNet(config_.net, seed);
  meta_.seed = seed;
}

std::vector<phantoms::ClassLabel> ScoreModel::classes() const {
  if (regime_ == Regime::PerClass) return {*class_};
  return {phantoms::kAllClasses.begin(), phantoms::kAllClasses.end()};
}

namespace {

const phantoms::OneHot* class_arg(const ScoreModel& m, const phantoms::OneHot* cls) {
  if (!m.conditioned()) return nullptr;
  if (!cls) throw InvalidArgument("class-conditioned score model requires a class one-hot vector");
  phantoms::from_one_hot(*cls);
  return cls;
}

}  // namespace

Image ScoreModel::denoise(const Image& x, double sigma, const phantoms::OneHot* cls) const {
  if (!(sigma > 0)) throw InvalidArgument("denoise: sigma must be > 0");
  const auto p = precondition(sigma, config_.sigma_data);
  Image f = net_.forward(p.c_in * x, p.c_noise, class_arg(*this, cls));
  return p.c_skip * x + p.c_out * f;
}

Image ScoreModel::denoise_pullback(const Image& x, double sigma, const phantoms::OneHot* cls,
                                   const std::function<Image(const Image&)>& cotangent, Image* x_hat) const {
  if (!(sigma > 0)) throw InvalidArgument("denoise: sigma must be > 0");
  const auto p = precondition(sigma, config_.sigma_data);
  nn::ForwardCache cache;
  Image f = net_.forward(p.c_in * x, p.c_noise, class_arg(*this, cls), &cache);
  Image xh = p.c_skip * x + p.c_out * f;
  const Image g = cotangent(xh);
  if (x_hat) *x_hat = std::move(xh);
  Image g_in = net_.backward(cache, p.c_out * g, nullptr);
  return p.c_skip * g + p.c_in * g_in;
}

void ScoreModel::save(const fs::path& path) const {
  checkpoint::save_weights(path, net_.params());
  json j;
  j["kind"] = "score";
  j["net"] = checkpoint::to_json(config_.net);
  j["sigma_data"] = config_.sigma_data;
  j["P_mean"] = config_.P_mean;
  j["P_std"] = config_.P_std;
  j["regime"] = to_string(regime_);
  j["class"] = class_ ? json(std::string(phantoms::name(*class_))) : json(nullptr);
  json cls = json::array();
  for (auto c : classes()) cls.push_back(std::string(phantoms::name(c)));
  j["classes"] = cls;
  j["training"] = checkpoint::to_json(meta_);
  j["weights_sha256"] = hash();
  io::write_text(checkpoint::sidecar_path(path), j.dump(2) + "\n");
  io::write_text(checkpoint::loss_csv_path(path), checkpoint::loss_curve_csv(meta_.loss_curve));
}

ScoreModel ScoreModel::load(const fs::path& path) {
  const auto side = checkpoint::sidecar_path(path);
  json j;
  try {
    j = json::parse(io::read_text(side));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint sidecar (") + e.what() + ")", side.string());
  }
  ScoreModel m;
  try {
    if (j.at("kind").get<std::string>() != "score") throw IoError("not a score-model checkpoint", side.string());
    m.config_.net = checkpoint::unet_config_from_json(j.at("net"));
    m.config_.sigma_data = j.at("sigma_data").get<double>();
    m.config_.P_mean = j.at("P_mean").get<double>();
    m.config_.P_std = j.at("P_std").get<double>();
    m.regime_ = parse_regime(j.at("regime").get<std::string>());
    if (!j.at("class").is_null()) m.class_ = phantoms::parse_class(j["class"].get<std::string>());
    m.meta_ = checkpoint::training_meta_from_json(j.at("training"));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint sidecar (") + e.what() + ")", side.string());
  }
  m.net_ = nn::UNet(m.config_.net, 0);
  m.net_.set_params(checkpoint::load_weights(path));
  return m;
}

namespace {

struct NoiseDraw {
  double sigma;
  Image noise;
};

std::vector<NoiseDraw> draw_noise(std::span<const TrainingItem> batch, const ScoreModelConfig& cfg,
                                  std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<NoiseDraw> out;
  out.reserve(batch.size());
  for (const auto& item : batch) {
    const double sigma = std::exp(cfg.P_mean + cfg.P_std * normal(rng));
    out.push_back({sigma, gaussian_image(shape_of(item.x), sigma, rng)});
  }
  return out;
}

}  // namespace

double edm_loss(std::span<const TrainingItem> batch, const DenoiseFn& denoiser, const ScoreModelConfig& cfg,
                std::uint64_t seed) {
  if (batch.empty()) return 0.0;
  const auto draws = draw_noise(batch, cfg, seed);
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& [sigma, noise] = draws[k];
    const Image d = denoiser(batch[k].x + noise, sigma, batch[k]);
    total += loss_weight(sigma, cfg.sigma_data) * (d - batch[k].x).square().sum();
  }
  return total / static_cast<double>(batch.size());
}

double edm_loss(std::span<const TrainingItem> batch, const ScoreModel& model, std::uint64_t seed,
                std::vector<double>* grad) {
  if (batch.empty()) return 0.0;
  const auto& cfg = model.config();
  const auto draws = draw_noise(batch, cfg, seed);
  if (grad && grad->size() != model.net().num_params()) grad->assign(model.net().num_params(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& [sigma, noise] = draws[k];
    const auto p = precondition(sigma, cfg.sigma_data);
    const double lambda = loss_weight(sigma, cfg.sigma_data);
    const Image noisy = batch[k].x + noise;
    const phantoms::OneHot oh = phantoms::one_hot(batch[k].label);
    const phantoms::OneHot* cls = model.conditioned() ? &oh : nullptr;
    nn::ForwardCache cache;
    const Image f = model.net().forward(p.c_in * noisy, p.c_noise, cls, grad ? &cache : nullptr);
    const Image diff = p.c_skip * noisy + p.c_out * f - batch[k].x;
    total += lambda * diff.square().sum();
    if (grad) model.net().backward(cache, (2.0 * lambda * p.c_out * inv_b) * diff, grad);
  }
  return total * inv_b;
}

std::vector<TrainingItem> load_items(const dataset::DatasetManifest& manifest, phantoms::Split split, Regime regime,
                                     std::optional<phantoms::ClassLabel> cls, Shape grid) {
  std::vector<TrainingItem> items;
  for (const auto* e : manifest.split(split)) {
    if (regime == Regime::PerClass && e->label != *cls) continue;
    auto s = dataset::load_sample(manifest, *e);
    items.push_back({phantoms::resize_to_training_grid(s, grid).pixels, e->label});
  }
  return items;
}

ScoreModel train_score_model(const dataset::DatasetManifest& manifest, const ScoreTrainConfig& cfg) {
  if (cfg.regime == Regime::PerClass) {
    if (!cfg.cls) throw InvalidArgument("per-class regime requires --class");
    bool present = false;
    for (const auto* e : manifest.split(phantoms::Split::Train)) present |= e->label == *cfg.cls;
    if (!present) {
      throw InvalidArgument("class " + std::string(phantoms::name(*cfg.cls)) + " is absent from the training split");
    }
  }
  auto train = load_items(manifest, phantoms::Split::Train, cfg.regime, cfg.cls, cfg.training_grid);
  auto val = load_items(manifest, phantoms::Split::Val, cfg.regime, cfg.cls, cfg.training_grid);
  return train_score_model(train, val, cfg);
}

ScoreModel train_score_model(const std::vector<TrainingItem>& train, const std::vector<TrainingItem>& val,
                             const ScoreTrainConfig& cfg) {
  if (train.empty()) throw InvalidArgument("train_score_model: empty training split");
  if (cfg.steps < 1 || cfg.batch_size < 1) throw InvalidArgument("train_score_model: steps and batch_size must be >= 1");
  ScoreModel model(default_score_config(cfg.training_grid, cfg.regime, cfg.base_channels, cfg.embed_dim), cfg.regime,
                   cfg.regime == Regime::PerClass ? cfg.cls : std::nullopt, derive_seed(cfg.seed, 1));
  nn::Adam adam(model.net().num_params(), cfg.adam);
  const auto& val_set = val.empty() ? train : val;
  const std::uint64_t val_seed = derive_seed(cfg.seed, 0x76616c);
  const int eval_every = std::max(1, cfg.eval_every);

  auto& meta = model.meta();
  meta.seed = cfg.seed;
  meta.loss_curve.push_back({0, 0.0, edm_loss(val_set, model, val_seed)});

  std::vector<double> grad(model.net().num_params());
  double train_acc = 0.0;
  int train_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng rng(derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::vector<TrainingItem> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      TrainingItem item = train[pick(rng)];
      if (cfg.flip_augment && (rng() & 1)) item.x = item.x.rowwise().reverse().eval();
      batch.push_back(std::move(item));
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = edm_loss(batch, model, derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(step)), &grad);
    if (!std::isfinite(loss)) throw NumericalFailure("score-model training loss is not finite", step);
    adam.step(model.net().params(), grad);
    train_acc += loss;
    ++train_n;
    if (step % eval_every == 0 || step == cfg.steps) {
      meta.loss_curve.push_back({step, train_acc / train_n, edm_loss(val_set, model, val_seed)});
      train_acc = 0.0;
      train_n = 0;
    }
  }
  meta.steps = cfg.steps;
  return model;
}

}  // namespace dpsmri::scorenet
