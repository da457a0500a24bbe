#include "dpsmri/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dpsmri::denoise {

namespace fs = std::filesystem;
using nlohmann::json;

NoiseEstimate estimate_noise_sigma(const Image& img) {
  const int H = static_cast<int>(img.rows()), W = static_cast<int>(img.cols());
  if (H < kPatchSize || W < kPatchSize) {
    throw InvalidArgument("estimate_noise_sigma: image " + to_string(shape_of(img)) + " smaller than 20x20 patch");
  }
  const int origins[4][2] = {{0, 0}, {0, W - kPatchSize}, {H - kPatchSize, 0}, {H - kPatchSize, W - kPatchSize}};
  NoiseEstimate best;
  double best_mean = 0.0;
  for (int k = 0; k < 4; ++k) {
    const auto patch = img.block(origins[k][0], origins[k][1], kPatchSize, kPatchSize);
    const double mean = patch.mean();
    if (k == 0 || mean < best_mean) {
      best_mean = mean;
      best.row = origins[k][0];
      best.col = origins[k][1];
      const double n = patch.size();
      best.sigma_hat = std::sqrt((patch - mean).square().sum() / (n - 1.0));
    }
  }
  return best;
}

NoiseEstimate estimate_noise_sigma(const phantoms::ImageSample& s) { return estimate_noise_sigma(s.pixels); }

NoisierPair noisier2noise_target(const phantoms::ImageSample& sample, double sigma_hat, std::uint64_t seed,
                                 double multiplier) {
  if (!(sigma_hat >= 0)) throw InvalidArgument("noisier2noise_target: sigma_hat must be >= 0");
  NoisierPair p{sample.pixels, sample.pixels};
  const double extra = multiplier * sigma_hat;
  if (extra > 0) {
    Rng rng(seed);
    p.noisier_input += gaussian_image(shape_of(sample.pixels), extra, rng);
  }
  return p;
}

nn::UNetConfig DenoiserConfig::default_net() {
  nn::UNetConfig c;
  c.base_channels = 8;
  c.channel_mult = {1, 2, 2};
  c.per_level_resolutions = nn::halving_resolutions({48, 48}, 3);
  c.embed_dim = 16;
  c.use_class_embedding = false;
  return c;
}

Denoiser::Denoiser(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.net.use_class_embedding) throw InvalidArgument("the denoiser is not class-conditioned");
  if (!(cfg_.noise_multiplier > 0)) throw InvalidArgument("noise_multiplier must be > 0");
  net_ = nn::UNet(cfg_.net, derive_seed(cfg_.seed, 1));
  meta_.seed = cfg_.seed;
}

Image Denoiser::model(const Image& y, nn::ForwardCache* cache) const {
  return y + net_.forward(y, 0.0, nullptr, cache);
}

Image Denoiser::apply(const Image& y) const {
  Image out = model(y);
  if (cfg_.apply_correction) {
    const double a2 = cfg_.noise_multiplier * cfg_.noise_multiplier;
    out = ((1.0 + a2) * out - y) / a2;
  }
  return out;
}

void Denoiser::save(const fs::path& path) const {
  checkpoint::save_weights(path, net_.params());
  json j;
  j["kind"] = "denoiser";
  j["net"] = checkpoint::to_json(cfg_.net);
  j["epochs"] = cfg_.epochs;
  j["batch_size"] = cfg_.batch_size;
  j["noise_multiplier"] = cfg_.noise_multiplier;
  j["apply_correction"] = cfg_.apply_correction;
  j["seed"] = cfg_.seed;
  j["training"] = checkpoint::to_json(meta_);
  j["weights_sha256"] = hash();
  io::write_text(checkpoint::sidecar_path(path), j.dump(2) + "\n");
  io::write_text(checkpoint::loss_csv_path(path), checkpoint::loss_curve_csv(meta_.loss_curve));
}

Denoiser Denoiser::load(const fs::path& path) {
  const auto side = checkpoint::sidecar_path(path);
  json j;
  try {
    j = json::parse(io::read_text(side));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint sidecar (") + e.what() + ")", side.string());
  }
  DenoiserConfig cfg;
  checkpoint::TrainingMeta meta;
  try {
    if (j.at("kind").get<std::string>() != "denoiser") throw IoError("not a denoiser checkpoint", side.string());
    cfg.net = checkpoint::unet_config_from_json(j.at("net"));
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.noise_multiplier = j.at("noise_multiplier").get<double>();
    cfg.apply_correction = j.at("apply_correction").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    meta = checkpoint::training_meta_from_json(j.at("training"));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint sidecar (") + e.what() + ")", side.string());
  }
  Denoiser d(cfg);
  d.net_.set_params(checkpoint::load_weights(path));
  d.meta_ = std::move(meta);
  return d;
}

double noisier2noise_loss(const Denoiser& d, std::span<const phantoms::ImageSample> batch,
                          std::span<const double> sigma_hats, std::uint64_t seed, std::vector<double>* grad) {
  if (batch.empty()) return 0.0;
  if (grad && grad->size() != d.net().num_params()) grad->assign(d.net().num_params(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto pair = noisier2noise_target(batch[k], sigma_hats[k], derive_seed(seed, k), d.config().noise_multiplier);
    nn::ForwardCache cache;
    const Image diff = d.model(pair.noisier_input, grad ? &cache : nullptr) - pair.target;
    const double n = static_cast<double>(diff.size());
    total += diff.square().sum() / n;
    if (grad) d.net().backward(cache, (2.0 * inv_b / n) * diff, grad);
  }
  return total * inv_b;
}

Denoiser train_denoiser(const dataset::DatasetManifest& manifest, const DenoiserConfig& cfg) {
  std::vector<phantoms::ImageSample> train, val;
  for (const auto* e : manifest.split(phantoms::Split::Train)) train.push_back(dataset::load_sample(manifest, *e));
  for (const auto* e : manifest.split(phantoms::Split::Val)) val.push_back(dataset::load_sample(manifest, *e));
  return train_denoiser(train, val, cfg);
}

Denoiser train_denoiser(const std::vector<phantoms::ImageSample>& train, const std::vector<phantoms::ImageSample>& val,
                        const DenoiserConfig& cfg) {
  if (train.empty()) throw InvalidArgument("train_denoiser: empty training split");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidArgument("train_denoiser: epochs and batch_size must be >= 1");
  Denoiser d(cfg);

  auto estimates = [](const std::vector<phantoms::ImageSample>& v) {
    std::vector<double> s;
    for (const auto& x : v) s.push_back(estimate_noise_sigma(x).sigma_hat);
    return s;
  };
  const auto train_sig = estimates(train);
  const auto& val_set = val.empty() ? train : val;
  const auto val_sig = estimates(val_set);
  const std::uint64_t val_seed = derive_seed(cfg.seed, 0x76616c);

  nn::Adam adam(d.net().num_params(), cfg.adam);
  auto& meta = d.meta();
  meta.loss_curve.push_back({0, 0.0, noisier2noise_loss(d, val_set, val_sig, val_seed)});

  std::vector<double> grad(d.net().num_params());
  std::vector<std::size_t> order(train.size());
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double acc = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<phantoms::ImageSample> batch;
      std::vector<double> sig;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train[order[k]]);
        sig.push_back(train_sig[order[k]]);
      }
      ++step;
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss =
          noisier2noise_loss(d, batch, sig, derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(step)), &grad);
      if (!std::isfinite(loss)) throw NumericalFailure("denoiser training loss is not finite", step);
      adam.step(d.net().params(), grad);
      acc += loss;
      ++batches;
    }
    meta.loss_curve.push_back({epoch, acc / batches, noisier2noise_loss(d, val_set, val_sig, val_seed)});
  }
  meta.steps = step;
  return d;
}

dataset::DatasetManifest denoise_dataset(const dataset::DatasetManifest& manifest, const Denoiser& denoiser,
                                         const fs::path& out_dir) {
  denoiser.config().net.validate();
  if (denoiser.config().net.use_class_embedding) {
    throw InvalidArgument("denoise_dataset: checkpoint architecture is class-conditioned");
  }
  dataset::DatasetManifest out;
  out.generator_seed = manifest.generator_seed;
  out.root = out_dir;
  out.provenance = dataset::Provenance{manifest.root.string(), denoiser.hash()};
  for (const auto& e : manifest.entries) {
    const auto sample = dataset::load_sample(manifest, e);
    dataset::ManifestEntry ne = e;
    ne.noise_sigma_true.reset();
    io::write_f32(out_dir / ne.path, denoiser.apply(sample.pixels));
    if (e.clean_path) io::write_f32(out_dir / *ne.clean_path, dataset::load_clean(manifest, e));
    out.entries.push_back(std::move(ne));
  }
  dataset::save_manifest(out, out_dir);
  return out;
}

}  // namespace dpsmri::denoise
