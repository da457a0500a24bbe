#pragma once

#include "dpsmri/baseline.hpp"
#include "dpsmri/dataset.hpp"
#include "dpsmri/operators.hpp"
#include "dpsmri/sampler.hpp"
#include "dpsmri/scorenet.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dpsmri::harness {

/// ||recon - reference|| / ||reference||. Throws InvalidArgument for a zero
/// reference or mismatched shapes.
double nrmse(const Image& recon, const Image& reference);

struct ResultRow {
  std::string slice_id;
  phantoms::ClassLabel cls = phantoms::ClassLabel::FseAx;
  std::string method;
  std::string regime;
  double R_target = 0.0;
  double R_achieved = 1.0;
  int N_s = 0;  // 0 for non-sampling methods
  double nrmse = 0.0;
  double wall_time_s = 0.0;
  std::string ckpt_hash = "-";
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  /// Mask used for each (slice_id, R_target), keyed by mask_key().
  std::map<std::string, operators::SamplingMask> masks;

  /// Sorts rows by (slice_id, method, regime, R_target, N_s).
  void canonicalize();
};

std::string mask_key(const std::string& slice_id, double R_target);

inline constexpr const char* kCsvHeader = "slice_id,class,method,regime,R_target,R_achieved,N_s,nrmse,wall_time_s,ckpt_hash";

std::string to_csv(const ExperimentResult& result);
ExperimentResult from_csv(const std::string& text);

enum class MethodKind { Dps, L1Wavelet, ZeroFilled };

struct MethodSpec {
  MethodKind kind = MethodKind::Dps;
  /// Label written to the regime column, e.g. "all-embed+denoised".
  std::string regime = "-";
  /// Checkpoint files. A single file serves every class; several per-class
  /// files are matched to slices by their trained class.
  std::vector<std::filesystem::path> checkpoints;
  /// Already-loaded models; take precedence over `checkpoints` when non-empty.
  std::vector<std::shared_ptr<const scorenet::ScoreModel>> models;

  std::string method_name() const;
};

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::vector<MethodSpec> methods;
  std::vector<double> R_targets{1.5, 2.0};
  std::vector<int> Ns_sweep{1, 2, 3, 4, 5};
  sampler::SamplerConfig sampler;
  baseline::CSConfig cs;
  /// Echo-train lengths at the reference matrix size. Each slice draws one
  /// and scales it by n_lines / etl_reference_lines (minimum 2).
  std::vector<int> etl_choices{12, 14, 18, 20, 22};
  int etl_reference_lines = 200;
  phantoms::Split split = phantoms::Split::Test;
  int max_slices = 0;  // 0 keeps every slice of the split
  double noise_sigma_d = 0.0;
  bool record_timing = false;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Throws ConfigurationError on missing or ill-typed fields.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct SliceMeasurement {
  operators::KSpaceMeasurement y;
  Image reference;
  int etl = 0;
};

/// Mask and measurement for slice `ordinal` at R_targets[r_index]. The echo
/// train length depends on the slice only; the mask seed on the slice and the
/// value of R.
SliceMeasurement measure_slice(const phantoms::ImageSample& sample, int ordinal, int r_index,
                               const ExperimentConfig& cfg);

/// Sampler seed shared by every DPS method for a (slice, R) cell. Like the
/// mask seed it depends on the value of R, not its index.
std::uint64_t cell_seed(const ExperimentConfig& cfg, int ordinal, int r_index);

/// Slices the experiment runs on, in manifest order.
std::vector<phantoms::ImageSample> experiment_slices(const dataset::DatasetManifest& manifest,
                                                     const ExperimentConfig& cfg);

/// Every configured method on every slice at every target R. Throws
/// ConfigurationError naming the regime when a checkpoint is missing.
ExperimentResult run_ablation(const ExperimentConfig& cfg);
ExperimentResult run_ablation(const ExperimentConfig& cfg, const std::vector<phantoms::ImageSample>& slices);

/// For the first DPS method: draws max(Ns_sweep) posterior samples per cell
/// and reports the mean of the first k samples for each k in the sweep.
ExperimentResult run_averaging_sweep(const ExperimentConfig& cfg);
ExperimentResult run_averaging_sweep(const ExperimentConfig& cfg, const std::vector<phantoms::ImageSample>& slices);

struct LambdaSearch {
  double best_lambda = 0.0;
  std::vector<std::pair<double, double>> mean_nrmse;  // (lambda, mean NRMSE)
};

/// Picks the L1 weight with the lowest mean NRMSE on the given measurements.
LambdaSearch tune_l1_lambda(const std::vector<SliceMeasurement>& held_out, const std::vector<double>& grid,
                            const baseline::CSConfig& base);

/// Writes results.csv, one nrmse_<CLASS>.png per class present and
/// ns_sweep.png. Throws IoError when the directory is unwritable.
std::vector<std::filesystem::path> emit_report(const ExperimentResult& result, const std::filesystem::path& out_dir);

struct AuditPanel {
  std::string id;
  double fit_mu = 0.0;
  double fit_sigma = 0.0;
  double ks_statistic = 0.0;  // against the fitted normal
  std::vector<double> bin_edges;
  std::vector<int> counts;
};

struct AuditReport {
  std::vector<AuditPanel> panels;
};

inline constexpr int kAuditPanels = 25;

/// Histogram, normal fit and Kolmogorov-Smirnov statistic of each patch.
AuditReport audit_patches(const std::vector<std::string>& ids, const std::vector<Image>& patches, int bins = 16);

/// Picks 25 samples with `seed`, takes each one's lowest-mean corner patch and
/// audits it. Writes audit.json and audit.png to `out_dir` when non-empty.
/// Throws InvalidArgument for fewer than 25 samples.
AuditReport background_noise_audit(const dataset::DatasetManifest& manifest, std::uint64_t seed,
                                   const std::filesystem::path& out_dir = {});

nlohmann::json to_json(const AuditReport& report);
void render_audit(const AuditReport& report, const std::filesystem::path& png);

}  // namespace dpsmri::harness
