// Command-line front end: data generation, denoising, score-model training,
// reconstruction, experiments and reports.

#include "dpsmri/baseline.hpp"
#include "dpsmri/dataset.hpp"
#include "dpsmri/denoise.hpp"
#include "dpsmri/harness.hpp"
#include "dpsmri/operators.hpp"
#include "dpsmri/sampler.hpp"
#include "dpsmri/scorenet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace dpsmri;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigurationError("cannot parse " + path + ": " + e.what());
  }
}

// K-space files carry no header; the column count follows from the file size
// and the mask's line count.
KSpace read_kspace(const fs::path& path, const operators::SamplingMask& mask) {
  const auto bytes = io::file_size(path);
  const auto per_row = static_cast<std::uintmax_t>(mask.n_lines()) * 8;
  if (per_row == 0 || bytes % per_row != 0) {
    throw ConfigurationError("k-space file size does not match the mask's " + std::to_string(mask.n_lines()) +
                             " lines: " + path.string());
  }
  return io::read_c64(path, {mask.n_lines(), static_cast<int>(bytes / per_row)});
}

struct DataGenArgs {
  std::string out, config;
  std::uint64_t seed = 0;
  int train = -1, val = -1, test = -1;
};

void data_gen(const DataGenArgs& a) {
  dataset::DatasetConfig cfg;
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    try {
      if (j.contains("sizes")) cfg.sizes = j["sizes"].get<std::vector<int>>();
      cfg.sigma_min = j.value("sigma_min", cfg.sigma_min);
      cfg.sigma_max = j.value("sigma_max", cfg.sigma_max);
      if (j.contains("per_class_counts")) {
        for (const auto& [k, v] : j["per_class_counts"].items()) cfg.per_class_counts[phantoms::parse_split(k)] = v;
      }
    } catch (const json::exception& e) {
      throw ConfigurationError(std::string("dataset config: ") + e.what());
    }
  }
  if (a.train >= 0) cfg.per_class_counts[phantoms::Split::Train] = a.train;
  if (a.val >= 0) cfg.per_class_counts[phantoms::Split::Val] = a.val;
  if (a.test >= 0) cfg.per_class_counts[phantoms::Split::Test] = a.test;
  cfg.seed = a.seed;
  const auto m = dataset::build_dataset(cfg, a.out);
  std::cout << "wrote " << m.entries.size() << " samples to " << a.out << "\n";
}

struct UndersampleArgs {
  std::string data, id, kspace_out, mask_out, mode = "FSE";
  double R = 2.0, sigma_d = 0.0;
  int etl = 4;
  std::uint64_t seed = 0;
};

void data_undersample(const UndersampleArgs& a) {
  const auto man = dataset::load_manifest(a.data);
  const auto sample = dataset::load_sample(man, man.find(a.id));
  const auto mode = operators::parse_mask_mode(a.mode);
  const auto mask = operators::make_echo_train_mask(static_cast<int>(sample.pixels.rows()),
                                                    mode == operators::MaskMode::SE ? 1 : a.etl, a.R, a.seed, mode);
  auto y = operators::forward(sample.pixels, mask);
  if (a.sigma_d > 0) y = operators::add_measurement_noise(y, a.sigma_d, derive_seed(a.seed, 1));
  io::write_c64(a.kspace_out, y.values);
  operators::save_mask(a.mask_out, mask);
  std::cout << "R = " << mask.R << " (" << mask.kept() << "/" << mask.n_lines() << " lines)\n";
}

struct DenoiseTrainArgs {
  std::string data, out;
  int epochs = -1;
  bool correction = false;
  std::uint64_t seed = 0;
};

void denoise_train(const DenoiseTrainArgs& a) {
  denoise::DenoiserConfig cfg;
  if (a.epochs > 0) cfg.epochs = a.epochs;
  cfg.apply_correction = a.correction;
  cfg.seed = a.seed;
  const auto d = denoise::train_denoiser(dataset::load_manifest(a.data), cfg);
  d.save(a.out);
  std::cout << "checkpoint " << a.out << " sha256 " << d.hash() << "\n";
}

void denoise_apply(const std::string& data, const std::string& ckpt, const std::string& out) {
  const auto d = denoise::Denoiser::load(ckpt);
  const auto m = denoise::denoise_dataset(dataset::load_manifest(data), d, out);
  std::cout << "denoised " << m.entries.size() << " samples into " << out << "\n";
}

struct ScoreTrainArgs {
  std::string data, regime = "all-embed", cls, out, config;
  int steps = -1;
  std::uint64_t seed = 0;
};

void scorenet_train(const ScoreTrainArgs& a) {
  scorenet::ScoreTrainConfig cfg;
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    try {
      cfg.steps = j.value("steps", cfg.steps);
      cfg.batch_size = j.value("batch_size", cfg.batch_size);
      cfg.eval_every = j.value("eval_every", cfg.eval_every);
      cfg.base_channels = j.value("base_channels", cfg.base_channels);
      cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
      cfg.flip_augment = j.value("flip_augment", cfg.flip_augment);
      cfg.adam.lr = j.value("lr", cfg.adam.lr);
      if (j.contains("training_grid")) {
        const auto g = j["training_grid"].get<std::vector<int>>();
        if (g.size() != 2) throw ConfigurationError("training_grid must be [rows, cols]");
        cfg.training_grid = {g[0], g[1]};
      }
    } catch (const json::exception& e) {
      throw ConfigurationError(std::string("scorenet config: ") + e.what());
    }
  }
  cfg.regime = scorenet::parse_regime(a.regime);
  if (!a.cls.empty()) cfg.cls = phantoms::parse_class(a.cls);
  if (a.steps > 0) cfg.steps = a.steps;
  cfg.seed = a.seed;
  const auto m = scorenet::train_score_model(dataset::load_manifest(a.data), cfg);
  m.save(a.out);
  std::cout << "checkpoint " << a.out << " sha256 " << m.hash() << "\n";
}

struct ReconDpsArgs {
  std::string kspace, mask, ckpt, cls, out;
  int ns = 5, nt = -1;
  double sigma_d = 0.0;
  bool save_samples = false, save_stddev = false;
  std::uint64_t seed = 0;
};

void recon_dps(const ReconDpsArgs& a) {
  const auto mask = operators::load_mask(a.mask);
  operators::KSpaceMeasurement y{read_kspace(a.kspace, mask), mask, a.sigma_d};
  const auto model = scorenet::ScoreModel::load(a.ckpt);
  std::optional<phantoms::ClassLabel> cls;
  if (!a.cls.empty()) cls = phantoms::parse_class(a.cls);
  const sampler::ScoreModelDenoiser D(model, cls);
  sampler::SamplerConfig cfg;
  cfg.N_s = a.ns;
  if (a.nt > 0) cfg.N_t = a.nt;
  cfg.seed = a.seed;
  sampler::ReconstructOptions opts;
  opts.keep_samples = a.save_samples;
  opts.compute_stddev = a.save_stddev;
  const auto res = sampler::reconstruct(y, D, cfg, opts);
  io::write_f32(a.out, res.mean_image);
  for (std::size_t k = 0; k < res.samples.size(); ++k) {
    io::write_f32(a.out + ".sample" + std::to_string(k) + ".f32", res.samples[k]);
  }
  if (res.stddev_map) io::write_f32(a.out + ".stddev.f32", *res.stddev_map);
  std::cout << "wrote " << a.out << " (" << to_string(shape_of(res.mean_image)) << ")\n";
}

struct ReconL1Args {
  std::string kspace, mask, out;
  double lambda = 1e-2;
  int iters = 100;
};

void recon_l1(const ReconL1Args& a) {
  const auto mask = operators::load_mask(a.mask);
  operators::KSpaceMeasurement y{read_kspace(a.kspace, mask), mask, 0.0};
  baseline::CSConfig cfg;
  cfg.lambda = a.lambda;
  cfg.n_iters = a.iters;
  io::write_f32(a.out, baseline::l1_wavelet_reconstruct(y, cfg));
  std::cout << "wrote " << a.out << "\n";
}

harness::ExperimentConfig load_experiment(const std::string& path, std::optional<std::uint64_t> seed,
                                          const std::string& out) {
  auto cfg = harness::experiment_config_from_json(read_json_file(path));
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  if (cfg.out_dir.empty()) throw ConfigurationError("experiment: no output directory (set out_dir or --out)");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion posterior sampling for undersampled MRI"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;
  std::function<void()> action;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Master seed"); };

  auto* data = app.add_subcommand("data", "Synthetic datasets")->require_subcommand(1);
  DataGenArgs gen;
  auto* gen_cmd = data->add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "Dataset config (JSON)");
  gen_cmd->add_option("--train", gen.train, "Training samples per class");
  gen_cmd->add_option("--val", gen.val, "Validation samples per class");
  gen_cmd->add_option("--test", gen.test, "Test samples per class");
  add_seed(gen_cmd);
  gen_cmd->callback([&] { action = [&] { gen.seed = seed; data_gen(gen); }; });

  UndersampleArgs us;
  auto* us_cmd = data->add_subcommand("undersample", "Write k-space and mask for one sample");
  us_cmd->add_option("--data", us.data)->required();
  us_cmd->add_option("--id", us.id)->required();
  us_cmd->add_option("--R", us.R, "Target acceleration");
  us_cmd->add_option("--etl", us.etl, "Echo train length");
  us_cmd->add_option("--mode", us.mode, "FSE or SE");
  us_cmd->add_option("--sigma-d", us.sigma_d, "Measurement noise level");
  us_cmd->add_option("--kspace", us.kspace_out)->required();
  us_cmd->add_option("--mask", us.mask_out)->required();
  add_seed(us_cmd);
  us_cmd->callback([&] { action = [&] { us.seed = seed; data_undersample(us); }; });

  auto* den = app.add_subcommand("denoise", "Self-supervised denoising")->require_subcommand(1);
  DenoiseTrainArgs dt;
  auto* dt_cmd = den->add_subcommand("train", "Train a denoiser");
  dt_cmd->add_option("--data", dt.data)->required();
  dt_cmd->add_option("--out", dt.out, "Checkpoint path")->required();
  dt_cmd->add_option("--epochs", dt.epochs);
  dt_cmd->add_flag("--correction", dt.correction, "Apply the noise-level correction at inference");
  add_seed(dt_cmd);
  dt_cmd->callback([&] { action = [&] { dt.seed = seed; denoise_train(dt); }; });

  std::string da_data, da_ckpt, da_out;
  auto* da_cmd = den->add_subcommand("apply", "Denoise a dataset");
  da_cmd->add_option("--data", da_data)->required();
  da_cmd->add_option("--ckpt", da_ckpt)->required();
  da_cmd->add_option("--out", da_out)->required();
  add_seed(da_cmd);
  da_cmd->callback([&] { action = [&] { denoise_apply(da_data, da_ckpt, da_out); }; });

  auto* sn = app.add_subcommand("scorenet", "Score models")->require_subcommand(1);
  ScoreTrainArgs st;
  auto* st_cmd = sn->add_subcommand("train", "Train a score model");
  st_cmd->add_option("--data", st.data)->required();
  st_cmd->add_option("--regime", st.regime, "per-class, all or all-embed");
  st_cmd->add_option("--class", st.cls, "Class for per-class training");
  st_cmd->add_option("--out", st.out)->required();
  st_cmd->add_option("--steps", st.steps);
  st_cmd->add_option("--config", st.config, "Training config (JSON)");
  add_seed(st_cmd);
  st_cmd->callback([&] { action = [&] { st.seed = seed; scorenet_train(st); }; });

  auto* rc = app.add_subcommand("recon", "Reconstruction")->require_subcommand(1);
  ReconDpsArgs rd;
  auto* rd_cmd = rc->add_subcommand("dps", "Diffusion posterior sampling");
  rd_cmd->add_option("--kspace", rd.kspace)->required();
  rd_cmd->add_option("--mask", rd.mask)->required();
  rd_cmd->add_option("--ckpt", rd.ckpt)->required();
  rd_cmd->add_option("--class", rd.cls);
  rd_cmd->add_option("--ns", rd.ns, "Posterior samples to average");
  rd_cmd->add_option("--nt", rd.nt, "Sampler steps");
  rd_cmd->add_option("--out", rd.out)->required();
  rd_cmd->add_flag("--save-samples", rd.save_samples);
  rd_cmd->add_flag("--save-stddev", rd.save_stddev);
  add_seed(rd_cmd);
  rd_cmd->callback([&] { action = [&] { rd.seed = seed; recon_dps(rd); }; });

  ReconL1Args rl;
  auto* rl_cmd = rc->add_subcommand("l1", "L1-wavelet compressed sensing");
  rl_cmd->add_option("--kspace", rl.kspace)->required();
  rl_cmd->add_option("--mask", rl.mask)->required();
  rl_cmd->add_option("--lambda", rl.lambda);
  rl_cmd->add_option("--iters", rl.iters);
  rl_cmd->add_option("--out", rl.out)->required();
  add_seed(rl_cmd);
  rl_cmd->callback([&] { action = [&] { recon_l1(rl); }; });

  auto* ex = app.add_subcommand("exp", "Experiments")->require_subcommand(1);
  std::string ex_config, ex_out;
  for (const char* name : {"ablation", "sweep"}) {
    auto* c = ex->add_subcommand(name, std::string(name) == "ablation" ? "Regime ablation" : "N_s averaging sweep");
    c->add_option("--config", ex_config, "Experiment config (JSON)")->required();
    c->add_option("--out", ex_out, "Output directory");
    c->add_option("--seed", seed_override, "Master seed");
    const bool ablation = std::string(name) == "ablation";
    c->callback([&, ablation] {
      action = [&, ablation] {
        const auto cfg = load_experiment(ex_config, seed_override, ex_out);
        const auto res = ablation ? harness::run_ablation(cfg) : harness::run_averaging_sweep(cfg);
        for (const auto& p : harness::emit_report(res, cfg.out_dir)) std::cout << "wrote " << p.string() << "\n";
      };
    });
  }
  std::string au_data, au_out;
  auto* au_cmd = ex->add_subcommand("audit", "Background-noise audit");
  au_cmd->add_option("--data", au_data)->required();
  au_cmd->add_option("--out", au_out)->required();
  add_seed(au_cmd);
  au_cmd->callback([&] {
    action = [&] {
      const auto rep = harness::background_noise_audit(dataset::load_manifest(au_data), seed, au_out);
      std::cout << "audited " << rep.panels.size() << " patches into " << au_out << "\n";
    };
  });

  std::string rp_results, rp_out;
  auto* rp_cmd = app.add_subcommand("report", "Re-render plots from a results CSV");
  rp_cmd->add_option("--results", rp_results)->required();
  rp_cmd->add_option("--out", rp_out)->required();
  add_seed(rp_cmd);
  rp_cmd->callback([&] {
    action = [&] {
      const auto res = harness::from_csv(io::read_text(rp_results));
      for (const auto& p : harness::emit_report(res, rp_out)) std::cout << "wrote " << p.string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc_parse = app.exit(e);
    return rc_parse == 0 ? 0 : 2;
  }

  try {
    if (action) action();
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleConfiguration& e) {
    std::cerr << "infeasible configuration: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
