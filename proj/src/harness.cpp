#include "dpsmri/harness.hpp"

#include "dpsmri/denoise.hpp"
#include "dpsmri/raster.hpp"
#include "dpsmri/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace dpsmri::harness {

namespace fs = std::filesystem;
using nlohmann::json;

double nrmse(const Image& recon, const Image& reference) {
  if (shape_of(recon) != shape_of(reference)) {
    throw InvalidArgument("nrmse: shapes " + to_string(shape_of(recon)) + " and " + to_string(shape_of(reference)) +
                          " differ");
  }
  const double ref = std::sqrt(reference.square().sum());
  if (!(ref > 0)) throw InvalidArgument("nrmse: reference has zero norm");
  return std::sqrt((recon - reference).square().sum()) / ref;
}

void ExperimentResult::canonicalize() {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.slice_id, a.method, a.regime, a.R_target, a.N_s) <
           std::tie(b.slice_id, b.method, b.regime, b.R_target, b.N_s);
  });
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string mask_key(const std::string& slice_id, double R_target) { return slice_id + "@R" + fmt(R_target); }

std::string to_csv(const ExperimentResult& result) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : result.rows) {
    out += r.slice_id + "," + std::string(phantoms::name(r.cls)) + "," + r.method + "," + r.regime + "," +
           fmt(r.R_target) + "," + fmt(r.R_achieved) + "," + std::to_string(r.N_s) + "," + fmt(r.nrmse) + "," +
           fmt(r.wall_time_s) + "," + r.ckpt_hash + "\n";
  }
  return out;
}

ExperimentResult from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kCsvHeader)) {
    throw ConfigurationError("results CSV: unexpected header");
  }
  ExperimentResult res;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw ConfigurationError("results CSV: line " + std::to_string(lineno) + " has wrong arity");
    try {
      ResultRow r;
      r.slice_id = f[0];
      r.cls = phantoms::parse_class(f[1]);
      r.method = f[2];
      r.regime = f[3];
      r.R_target = std::stod(f[4]);
      r.R_achieved = std::stod(f[5]);
      r.N_s = std::stoi(f[6]);
      r.nrmse = std::stod(f[7]);
      r.wall_time_s = std::stod(f[8]);
      r.ckpt_hash = f[9];
      res.rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw ConfigurationError("results CSV: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return res;
}

std::string MethodSpec::method_name() const {
  switch (kind) {
    case MethodKind::Dps: return "dps";
    case MethodKind::L1Wavelet: return "l1-wavelet";
    case MethodKind::ZeroFilled: return "zero-filled";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigurationError("experiment: no methods configured");
  if (R_targets.empty()) throw ConfigurationError("experiment: empty R list");
  if (Ns_sweep.empty()) throw ConfigurationError("experiment: empty N_s sweep");
  for (int n : Ns_sweep) {
    if (n < 1) throw ConfigurationError("experiment: N_s values must be >= 1");
  }
  if (etl_choices.empty() || etl_reference_lines < 1) throw ConfigurationError("experiment: bad echo-train settings");
  if (noise_sigma_d < 0) throw ConfigurationError("experiment: noise_sigma_d must be >= 0");
  sampler.validate();
  cs.validate();
}

namespace {

MethodKind parse_kind(const std::string& s) {
  if (s == "dps") return MethodKind::Dps;
  if (s == "l1-wavelet" || s == "l1") return MethodKind::L1Wavelet;
  if (s == "zero-filled") return MethodKind::ZeroFilled;
  throw ConfigurationError("unknown method kind '" + s + "'");
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset.string();
  json methods = json::array();
  for (const auto& m : cfg.methods) {
    json jm;
    jm["kind"] = m.method_name();
    jm["regime"] = m.regime;
    json ck = json::array();
    for (const auto& p : m.checkpoints) ck.push_back(p.string());
    jm["checkpoints"] = ck;
    methods.push_back(jm);
  }
  j["methods"] = methods;
  j["R_targets"] = cfg.R_targets;
  j["Ns_sweep"] = cfg.Ns_sweep;
  j["sampler"] = {{"sigma_min", cfg.sampler.sigma_min}, {"sigma_max", cfg.sampler.sigma_max},
                  {"rho", cfg.sampler.rho},             {"N_t", cfg.sampler.N_t},
                  {"N_s", cfg.sampler.N_s},             {"likelihood_eps", cfg.sampler.likelihood_eps},
                  {"guidance_weight", cfg.sampler.guidance_weight}};
  j["cs"] = {{"lambda", cfg.cs.lambda},
             {"n_iters", cfg.cs.n_iters},
             {"wavelet_levels", cfg.cs.wavelet_levels},
             {"step_size", cfg.cs.step_size},
             {"accelerate", cfg.cs.accelerate}};
  j["etl_choices"] = cfg.etl_choices;
  j["etl_reference_lines"] = cfg.etl_reference_lines;
  j["split"] = std::string(phantoms::name(cfg.split));
  j["max_slices"] = cfg.max_slices;
  j["noise_sigma_d"] = cfg.noise_sigma_d;
  j["record_timing"] = cfg.record_timing;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir.string();
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    cfg.dataset = j.at("dataset").get<std::string>();
    for (const auto& jm : j.at("methods")) {
      MethodSpec m;
      m.kind = parse_kind(jm.at("kind").get<std::string>());
      m.regime = jm.value("regime", std::string("-"));
      for (const auto& p : jm.value("checkpoints", json::array())) m.checkpoints.emplace_back(p.get<std::string>());
      cfg.methods.push_back(std::move(m));
    }
    if (j.contains("R_targets")) cfg.R_targets = j["R_targets"].get<std::vector<double>>();
    if (j.contains("Ns_sweep")) cfg.Ns_sweep = j["Ns_sweep"].get<std::vector<int>>();
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      cfg.sampler.sigma_min = s.value("sigma_min", cfg.sampler.sigma_min);
      cfg.sampler.sigma_max = s.value("sigma_max", cfg.sampler.sigma_max);
      cfg.sampler.rho = s.value("rho", cfg.sampler.rho);
      cfg.sampler.N_t = s.value("N_t", cfg.sampler.N_t);
      cfg.sampler.N_s = s.value("N_s", cfg.sampler.N_s);
      cfg.sampler.likelihood_eps = s.value("likelihood_eps", cfg.sampler.likelihood_eps);
      cfg.sampler.guidance_weight = s.value("guidance_weight", cfg.sampler.guidance_weight);
    }
    if (j.contains("cs")) {
      const auto& c = j["cs"];
      cfg.cs.lambda = c.value("lambda", cfg.cs.lambda);
      cfg.cs.n_iters = c.value("n_iters", cfg.cs.n_iters);
      cfg.cs.wavelet_levels = c.value("wavelet_levels", cfg.cs.wavelet_levels);
      cfg.cs.step_size = c.value("step_size", cfg.cs.step_size);
      cfg.cs.accelerate = c.value("accelerate", cfg.cs.accelerate);
    }
    if (j.contains("etl_choices")) cfg.etl_choices = j["etl_choices"].get<std::vector<int>>();
    cfg.etl_reference_lines = j.value("etl_reference_lines", cfg.etl_reference_lines);
    if (j.contains("split")) cfg.split = phantoms::parse_split(j["split"].get<std::string>());
    cfg.max_slices = j.value("max_slices", cfg.max_slices);
    cfg.noise_sigma_d = j.value("noise_sigma_d", cfg.noise_sigma_d);
    cfg.record_timing = j.value("record_timing", cfg.record_timing);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", std::string());
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("experiment config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigurationError(std::string("experiment config: ") + e.what());
  }
  return cfg;
}

namespace {

// Seeds follow the R value rather than its position in R_targets, so a run
// over {2.0} reproduces the R = 2 cells of a run over {1.5, 2.0}.
std::uint64_t r_key(double R) { return static_cast<std::uint64_t>(std::llround(R * 1000.0)); }

}  // namespace

SliceMeasurement measure_slice(const phantoms::ImageSample& sample, int ordinal, int r_index,
                               const ExperimentConfig& cfg) {
  const int n_lines = static_cast<int>(sample.pixels.rows());
  const auto ord = static_cast<std::uint64_t>(ordinal);
  SliceMeasurement m;
  operators::MaskMode mode = operators::MaskMode::FSE;
  if (sample.label == phantoms::ClassLabel::SeAx) {
    mode = operators::MaskMode::SE;
    m.etl = 1;
  } else {
    Rng rng(derive_seed(cfg.seed, 0x65746c, ord));
    const int raw = cfg.etl_choices[rng() % cfg.etl_choices.size()];
    m.etl = std::max(2, static_cast<int>(std::lround(static_cast<double>(raw) * n_lines / cfg.etl_reference_lines)));
  }
  const double R = cfg.R_targets.at(static_cast<std::size_t>(r_index));
  const auto mask_seed = derive_seed(derive_seed(cfg.seed, 0x6d61736b, ord), r_key(R));
  const auto mask = operators::make_echo_train_mask(n_lines, m.etl, R, mask_seed, mode);
  m.reference = sample.pixels;
  m.y = operators::forward(sample.pixels, mask);
  if (cfg.noise_sigma_d > 0) {
    m.y = operators::add_measurement_noise(m.y, cfg.noise_sigma_d, derive_seed(mask_seed, 0x6e));
  }
  return m;
}

std::uint64_t cell_seed(const ExperimentConfig& cfg, int ordinal, int r_index) {
  const double R = cfg.R_targets.at(static_cast<std::size_t>(r_index));
  return derive_seed(derive_seed(cfg.seed, 0x73616d70, static_cast<std::uint64_t>(ordinal)), r_key(R));
}

std::vector<phantoms::ImageSample> experiment_slices(const dataset::DatasetManifest& manifest,
                                                     const ExperimentConfig& cfg) {
  std::vector<phantoms::ImageSample> out;
  for (const auto* e : manifest.split(cfg.split)) {
    if (cfg.max_slices > 0 && static_cast<int>(out.size()) >= cfg.max_slices) break;
    out.push_back(dataset::load_sample(manifest, *e));
  }
  if (out.empty()) throw ConfigurationError("experiment: no slices in split " + std::string(phantoms::name(cfg.split)));
  return out;
}

namespace {

// Models of one DPS method, resolved per class.
struct ResolvedMethod {
  std::vector<std::shared_ptr<const scorenet::ScoreModel>> models;

  const scorenet::ScoreModel& for_class(phantoms::ClassLabel c, const std::string& regime) const {
    if (models.size() == 1) return *models.front();
    for (const auto& m : models) {
      if (m->trained_class() == c) return *m;
    }
    throw ConfigurationError("regime '" + regime + "': no checkpoint for class " + std::string(phantoms::name(c)));
  }
};

ResolvedMethod resolve(const MethodSpec& spec) {
  ResolvedMethod r;
  if (!spec.models.empty()) {
    r.models = spec.models;
    return r;
  }
  if (spec.checkpoints.empty()) throw ConfigurationError("regime '" + spec.regime + "': no checkpoint configured");
  for (const auto& p : spec.checkpoints) {
    if (!fs::exists(p) || !fs::exists(checkpoint::sidecar_path(p))) {
      throw ConfigurationError("regime '" + spec.regime + "': checkpoint not found: " + p.string());
    }
    r.models.push_back(std::make_shared<const scorenet::ScoreModel>(scorenet::ScoreModel::load(p)));
  }
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentResult run_ablation(const ExperimentConfig& cfg) {
  const auto manifest = dataset::load_manifest(cfg.dataset);
  return run_ablation(cfg, experiment_slices(manifest, cfg));
}

ExperimentResult run_ablation(const ExperimentConfig& cfg, const std::vector<phantoms::ImageSample>& slices) {
  cfg.validate();
  std::vector<ResolvedMethod> resolved;
  for (const auto& m : cfg.methods) resolved.push_back(m.kind == MethodKind::Dps ? resolve(m) : ResolvedMethod{});

  ExperimentResult res;
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& sample = slices[s];
    for (std::size_t ri = 0; ri < cfg.R_targets.size(); ++ri) {
      const auto meas = measure_slice(sample, static_cast<int>(s), static_cast<int>(ri), cfg);
      res.masks[mask_key(sample.id, cfg.R_targets[ri])] = meas.y.mask;
      for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const auto& spec = cfg.methods[mi];
        ResultRow row;
        row.slice_id = sample.id;
        row.cls = sample.label;
        row.method = spec.method_name();
        row.regime = spec.regime;
        row.R_target = cfg.R_targets[ri];
        row.R_achieved = operators::acceleration(meas.y.mask);
        const auto t0 = std::chrono::steady_clock::now();
        Image recon;
        switch (spec.kind) {
          case MethodKind::Dps: {
            const auto& model = resolved[mi].for_class(sample.label, spec.regime);
            const sampler::ScoreModelDenoiser D(model, sample.label);
            auto sc = cfg.sampler;
            sc.seed = cell_seed(cfg, static_cast<int>(s), static_cast<int>(ri));
            recon = sampler::reconstruct(meas.y, D, sc).mean_image;
            row.N_s = sc.N_s;
            row.ckpt_hash = model.hash();
            break;
          }
          case MethodKind::L1Wavelet: recon = baseline::l1_wavelet_reconstruct(meas.y, cfg.cs); break;
          case MethodKind::ZeroFilled: recon = operators::adjoint(meas.y); break;
        }
        row.wall_time_s = cfg.record_timing ? seconds_since(t0) : 0.0;
        row.nrmse = nrmse(recon, meas.reference);
        res.rows.push_back(std::move(row));
      }
    }
  }
  res.canonicalize();
  return res;
}

ExperimentResult run_averaging_sweep(const ExperimentConfig& cfg) {
  const auto manifest = dataset::load_manifest(cfg.dataset);
  return run_averaging_sweep(cfg, experiment_slices(manifest, cfg));
}

ExperimentResult run_averaging_sweep(const ExperimentConfig& cfg, const std::vector<phantoms::ImageSample>& slices) {
  cfg.validate();
  const auto it = std::find_if(cfg.methods.begin(), cfg.methods.end(),
                               [](const MethodSpec& m) { return m.kind == MethodKind::Dps; });
  if (it == cfg.methods.end()) throw ConfigurationError("averaging sweep needs a DPS method");
  const auto resolved = resolve(*it);
  const int max_ns = *std::max_element(cfg.Ns_sweep.begin(), cfg.Ns_sweep.end());

  ExperimentResult res;
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& sample = slices[s];
    const auto& model = resolved.for_class(sample.label, it->regime);
    const sampler::ScoreModelDenoiser D(model, sample.label);
    for (std::size_t ri = 0; ri < cfg.R_targets.size(); ++ri) {
      const auto meas = measure_slice(sample, static_cast<int>(s), static_cast<int>(ri), cfg);
      res.masks[mask_key(sample.id, cfg.R_targets[ri])] = meas.y.mask;
      auto sc = cfg.sampler;
      sc.seed = cell_seed(cfg, static_cast<int>(s), static_cast<int>(ri));
      sc.N_s = max_ns;
      const auto t0 = std::chrono::steady_clock::now();
      sampler::ReconstructOptions keep;
      keep.keep_samples = true;
      const auto post = sampler::reconstruct(meas.y, D, sc, keep);
      const double per_sample = cfg.record_timing ? seconds_since(t0) / max_ns : 0.0;
      for (int k : cfg.Ns_sweep) {
        ResultRow row;
        row.slice_id = sample.id;
        row.cls = sample.label;
        row.method = it->method_name();
        row.regime = it->regime;
        row.R_target = cfg.R_targets[ri];
        row.R_achieved = operators::acceleration(meas.y.mask);
        row.N_s = k;
        row.nrmse = nrmse(sampler::mean_of(std::span(post.samples).first(static_cast<std::size_t>(k))),
                          meas.reference);
        row.wall_time_s = per_sample * k;
        row.ckpt_hash = model.hash();
        res.rows.push_back(std::move(row));
      }
    }
  }
  res.canonicalize();
  return res;
}

LambdaSearch tune_l1_lambda(const std::vector<SliceMeasurement>& held_out, const std::vector<double>& grid,
                            const baseline::CSConfig& base) {
  if (held_out.empty() || grid.empty()) throw InvalidArgument("tune_l1_lambda: need measurements and a grid");
  LambdaSearch out;
  double best = std::numeric_limits<double>::infinity();
  for (double lam : grid) {
    auto cs = base;
    cs.lambda = lam;
    double acc = 0.0;
    for (const auto& m : held_out) acc += nrmse(baseline::l1_wavelet_reconstruct(m.y, cs), m.reference);
    const double mean = acc / static_cast<double>(held_out.size());
    out.mean_nrmse.emplace_back(lam, mean);
    if (mean < best) {
      best = mean;
      out.best_lambda = lam;
    }
  }
  return out;
}

namespace {

using raster::Axis;
using raster::Canvas;

void draw_frame(Canvas& cv, const Axis& ax_y, int x0, int x1, double lo, double hi) {
  cv.rect(x0, ax_y.p1, x1, ax_y.p0, raster::kBlack);
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const int py = ax_y.map(v);
    cv.line(x0 - 3, py, x0, py, raster::kBlack);
    const auto label = raster::format_tick(v);
    cv.text(x0 - 6 - raster::text_width(label), py - 3, label, raster::kBlack);
  }
}

std::pair<double, double> padded_range(double lo, double hi) {
  if (hi <= lo) {
    lo -= 0.05;
    hi += 0.05;
  }
  const double pad = 0.05 * (hi - lo);
  return {std::max(0.0, lo - pad), hi + pad};
}

std::string group_label(const ResultRow& r) {
  std::string s = r.method;
  if (r.regime != "-") s += " " + r.regime;
  s += " R=" + fmt(r.R_target);
  if (r.N_s > 0) s += " NS=" + std::to_string(r.N_s);
  return s;
}

void plot_class(const std::vector<const ResultRow*>& rows, const std::string& title, const fs::path& png) {
  std::vector<std::string> groups;
  std::map<std::string, std::vector<double>> values;
  for (const auto* r : rows) {
    const auto g = group_label(*r);
    if (!values.count(g)) groups.push_back(g);
    values[g].push_back(r->nrmse);
  }
  double lo = 1e300, hi = -1e300;
  for (const auto& [g, v] : values) {
    lo = std::min(lo, *std::min_element(v.begin(), v.end()));
    hi = std::max(hi, *std::max_element(v.begin(), v.end()));
  }
  std::tie(lo, hi) = padded_range(lo, hi);

  const int n = static_cast<int>(groups.size());
  const int left = 70, col = 40, top = 30, plot_h = 220;
  const int width = std::max(360, left + n * col + 20);
  const int height = top + plot_h + 20 + 12 * n + 10;
  Canvas cv(width, height);
  cv.text(left, 8, title, raster::kBlack);
  const Axis ay{lo, hi, top + plot_h, top};
  draw_frame(cv, ay, left, left + n * col, lo, hi);
  for (int g = 0; g < n; ++g) {
    const auto& v = values[groups[static_cast<std::size_t>(g)]];
    const int cx = left + g * col + col / 2;
    const auto colour = raster::palette(g);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const int jitter = static_cast<int>(k % 7) - 3;
      cv.dot(cx + jitter * 2, ay.map(v[k]), 1, colour);
    }
    const int my = ay.map(stats::mean(v));
    cv.line(cx - 12, my, cx + 12, my, raster::kBlack);
    cv.text(cx - 3, top + plot_h + 5, std::to_string(g + 1), raster::kBlack);
    cv.text(10, top + plot_h + 20 + 12 * g, std::to_string(g + 1) + " " + groups[static_cast<std::size_t>(g)],
            colour);
  }
  cv.write_png(png);
}

void plot_sweep(const ExperimentResult& res, const fs::path& png) {
  // Series: (method regime R) -> N_s -> values.
  std::map<std::string, std::map<int, std::vector<double>>> series;
  for (const auto& r : res.rows) {
    if (r.N_s < 1) continue;
    std::string key = r.method;
    if (r.regime != "-") key += " " + r.regime;
    key += " R=" + fmt(r.R_target);
    series[key][r.N_s].push_back(r.nrmse);
  }
  const int left = 70, top = 30, plot_w = 300, plot_h = 220;
  const int height = top + plot_h + 30 + 12 * static_cast<int>(series.size()) + 10;
  Canvas cv(left + plot_w + 30, height);
  cv.text(left, 8, "MEAN NRMSE VS N_S", raster::kBlack);
  if (series.empty()) {
    cv.text(left + 10, top + plot_h / 2, "NO SAMPLING ROWS", raster::kGrey);
    cv.write_png(png);
    return;
  }
  int n_lo = 1 << 30, n_hi = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& [k, by_n] : series) {
    for (const auto& [n, v] : by_n) {
      n_lo = std::min(n_lo, n);
      n_hi = std::max(n_hi, n);
      const double m = stats::mean(v);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  }
  std::tie(lo, hi) = padded_range(lo, hi);
  const Axis ay{lo, hi, top + plot_h, top};
  const Axis ax{static_cast<double>(n_lo) - 0.5, static_cast<double>(n_hi) + 0.5, left, left + plot_w};
  draw_frame(cv, ay, left, left + plot_w, lo, hi);
  for (int n = n_lo; n <= n_hi; ++n) {
    const int px = ax.map(n);
    cv.line(px, top + plot_h, px, top + plot_h + 3, raster::kBlack);
    cv.text(px - 3, top + plot_h + 6, std::to_string(n), raster::kBlack);
  }
  int s = 0;
  for (const auto& [key, by_n] : series) {
    const auto colour = raster::palette(s);
    int px_prev = -1, py_prev = -1;
    for (const auto& [n, v] : by_n) {
      const int px = ax.map(n), py = ay.map(stats::mean(v));
      if (px_prev >= 0) cv.line(px_prev, py_prev, px, py, colour);
      cv.dot(px, py, 2, colour);
      px_prev = px;
      py_prev = py;
    }
    cv.text(10, top + plot_h + 24 + 12 * s, key, colour);
    ++s;
  }
  cv.write_png(png);
}

}  // namespace

std::vector<fs::path> emit_report(const ExperimentResult& result, const fs::path& out_dir) {
  if (result.rows.empty()) throw InvalidArgument("emit_report: no result rows");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory", out_dir.string());

  auto sorted = result;
  sorted.canonicalize();
  std::vector<fs::path> written;
  const auto csv = out_dir / "results.csv";
  io::write_text(csv, to_csv(sorted));
  written.push_back(csv);

  for (auto c : phantoms::kAllClasses) {
    std::vector<const ResultRow*> rows;
    for (const auto& r : sorted.rows) {
      if (r.cls == c) rows.push_back(&r);
    }
    if (rows.empty()) continue;
    const auto png = out_dir / ("nrmse_" + std::string(phantoms::name(c)) + ".png");
    plot_class(rows, "NRMSE " + std::string(phantoms::name(c)), png);
    written.push_back(png);
  }
  const auto sweep = out_dir / "ns_sweep.png";
  plot_sweep(sorted, sweep);
  written.push_back(sweep);
  return written;
}

AuditReport audit_patches(const std::vector<std::string>& ids, const std::vector<Image>& patches, int bins) {
  if (ids.size() != patches.size()) throw InvalidArgument("audit_patches: ids and patches differ in count");
  if (bins < 1) throw InvalidArgument("audit_patches: bins must be >= 1");
  AuditReport rep;
  for (std::size_t p = 0; p < patches.size(); ++p) {
    std::vector<double> v(patches[p].data(), patches[p].data() + patches[p].size());
    if (v.empty()) throw InvalidArgument("audit_patches: empty patch");
    AuditPanel panel;
    panel.id = ids[p];
    const double n = static_cast<double>(v.size());
    panel.fit_mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - panel.fit_mu) * (x - panel.fit_mu);
    panel.fit_sigma = std::sqrt(ss / n);

    std::sort(v.begin(), v.end());
    if (panel.fit_sigma > 0) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double F = stats::normal_cdf((v[i] - panel.fit_mu) / panel.fit_sigma);
        panel.ks_statistic = std::max({panel.ks_statistic, F - static_cast<double>(i) / n,
                                       static_cast<double>(i + 1) / n - F});
      }
    }
    const double lo = v.front(), hi = v.back() > v.front() ? v.back() : v.front() + 1e-12;
    for (int b = 0; b <= bins; ++b) panel.bin_edges.push_back(lo + (hi - lo) * b / bins);
    panel.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
      int b = static_cast<int>((x - lo) / (hi - lo) * bins);
      panel.counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
    }
    rep.panels.push_back(std::move(panel));
  }
  return rep;
}

json to_json(const AuditReport& report) {
  json panels = json::array();
  double mean_abs_mu = 0.0;
  for (const auto& p : report.panels) {
    panels.push_back({{"id", p.id},
                      {"fit_mu", p.fit_mu},
                      {"fit_sigma", p.fit_sigma},
                      {"ks_statistic", p.ks_statistic},
                      {"bin_edges", p.bin_edges},
                      {"counts", p.counts}});
    mean_abs_mu += std::abs(p.fit_mu);
  }
  if (!report.panels.empty()) mean_abs_mu /= static_cast<double>(report.panels.size());
  return {{"panels", panels}, {"mean_abs_mu", mean_abs_mu}};
}

void render_audit(const AuditReport& report, const fs::path& png) {
  constexpr int cols = 5, pw = 150, ph = 110;
  const int rows = std::max(1, (static_cast<int>(report.panels.size()) + cols - 1) / cols);
  Canvas cv(cols * pw, rows * ph);
  for (std::size_t i = 0; i < report.panels.size(); ++i) {
    const auto& p = report.panels[i];
    const int ox = static_cast<int>(i % cols) * pw, oy = static_cast<int>(i / cols) * ph;
    const int x0 = ox + 8, x1 = ox + pw - 8, y0 = oy + 20, y1 = oy + ph - 8;
    cv.text(x0, oy + 4, p.id, raster::kBlack);
    cv.rect(x0, y0, x1, y1, raster::kGrey);
    const int bins = static_cast<int>(p.counts.size());
    const double width = p.bin_edges.back() - p.bin_edges.front();
    const double bw = width / bins;
    const double n = std::accumulate(p.counts.begin(), p.counts.end(), 0.0);
    // Peak of the fitted density in count units bounds the y axis together with the tallest bar.
    double peak = *std::max_element(p.counts.begin(), p.counts.end());
    if (p.fit_sigma > 0) peak = std::max(peak, n * bw / (p.fit_sigma * std::sqrt(2 * M_PI)));
    const Axis ay{0.0, peak, y1, y0};
    const Axis ax{p.bin_edges.front(), p.bin_edges.back(), x0, x1};
    for (int b = 0; b < bins; ++b) {
      cv.fill_rect(ax.map(p.bin_edges[static_cast<std::size_t>(b)]) + 1, ay.map(p.counts[static_cast<std::size_t>(b)]),
                   ax.map(p.bin_edges[static_cast<std::size_t>(b + 1)]) - 1, y1, raster::palette(0));
    }
    if (p.fit_sigma > 0) {
      int px_prev = -1, py_prev = -1;
      for (int k = 0; k <= 60; ++k) {
        const double x = p.bin_edges.front() + width * k / 60.0;
        const double z = (x - p.fit_mu) / p.fit_sigma;
        const double density = n * bw * std::exp(-0.5 * z * z) / (p.fit_sigma * std::sqrt(2 * M_PI));
        const int px = ax.map(x), py = ay.map(density);
        if (px_prev >= 0) cv.line(px_prev, py_prev, px, py, raster::palette(3));
        px_prev = px;
        py_prev = py;
      }
    }
  }
  cv.write_png(png);
}

AuditReport background_noise_audit(const dataset::DatasetManifest& manifest, std::uint64_t seed,
                                   const fs::path& out_dir) {
  if (manifest.entries.size() < static_cast<std::size_t>(kAuditPanels)) {
    throw InvalidArgument("background_noise_audit: need at least 25 samples, have " +
                          std::to_string(manifest.entries.size()));
  }
  std::vector<std::size_t> idx(manifest.entries.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(kAuditPanels);

  std::vector<std::string> ids;
  std::vector<Image> patches;
  for (auto i : idx) {
    const auto& e = manifest.entries[i];
    const auto sample = dataset::load_sample(manifest, e);
    const auto est = denoise::estimate_noise_sigma(sample.pixels);
    ids.push_back(e.id);
    patches.push_back(sample.pixels.block(est.row, est.col, denoise::kPatchSize, denoise::kPatchSize));
  }
  auto rep = audit_patches(ids, patches);
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create audit directory", out_dir.string());
    io::write_text(out_dir / "audit.json", to_json(rep).dump(2) + "\n");
    render_audit(rep, out_dir / "audit.png");
  }
  return rep;
}

}  // namespace dpsmri::harness
