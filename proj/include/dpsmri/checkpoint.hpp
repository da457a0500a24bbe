#pragma once

#include "dpsmri/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

// On-disk checkpoint layout shared by the denoiser and the score model:
//   <path>           raw little-endian float64 weights, no header
//   <path>.json      architecture, conditioning and training metadata
//   <path>.loss.csv  step,train_loss,val_loss
namespace dpsmri::checkpoint {

struct LossRecord {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingMeta {
  int steps = 0;
  std::uint64_t seed = 0;
  std::vector<LossRecord> loss_curve;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
/// Hash of the serialized weight blob (lowercase hex SHA-256).
std::string weights_hash(std::span<const double> weights);

void save_weights(const std::filesystem::path& path, std::span<const double> weights);
std::vector<double> load_weights(const std::filesystem::path& path);

nlohmann::json to_json(const nn::UNetConfig& c);
nn::UNetConfig unet_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainingMeta& m);
TrainingMeta training_meta_from_json(const nlohmann::json& j);

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

std::filesystem::path sidecar_path(const std::filesystem::path& weights);
std::filesystem::path loss_csv_path(const std::filesystem::path& weights);

}  // namespace dpsmri::checkpoint
