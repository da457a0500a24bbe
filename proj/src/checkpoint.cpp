#include "dpsmri/checkpoint.hpp"

#include "dpsmri/dataset.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dpsmri::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return ss.str();
}

std::string weights_hash(std::span<const double> w) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(w.data()), w.size_bytes()});
}

void save_weights(const fs::path& path, std::span<const double> w) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size_bytes()));
  if (!out) throw IoError("write failed", path.string());
}

std::vector<double> load_weights(const fs::path& path) {
  const auto bytes = io::file_size(path);
  if (bytes % sizeof(double)) throw IoError("weight blob size is not a multiple of 8", path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading", path.string());
  std::vector<double> w(bytes / sizeof(double));
  in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(bytes));
  return w;
}

json to_json(const nn::UNetConfig& c) {
  json res = json::array();
  for (const auto& s : c.per_level_resolutions) res.push_back(json::array({s.rows, s.cols}));
  return {{"base_channels", c.base_channels},
          {"channel_mult", c.channel_mult},
          {"per_level_resolutions", res},
          {"embed_dim", c.embed_dim},
          {"noise_features", c.noise_features},
          {"use_class_embedding", c.use_class_embedding}};
}

nn::UNetConfig unet_config_from_json(const json& j) {
  nn::UNetConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.per_level_resolutions.clear();
  for (const auto& s : j.at("per_level_resolutions")) c.per_level_resolutions.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  c.embed_dim = j.at("embed_dim").get<int>();
  c.noise_features = j.at("noise_features").get<int>();
  c.use_class_embedding = j.at("use_class_embedding").get<bool>();
  c.validate();
  return c;
}

json to_json(const TrainingMeta& m) {
  json curve = json::array();
  for (const auto& r : m.loss_curve) curve.push_back({r.step, r.train_loss, r.val_loss});
  return {{"steps", m.steps}, {"seed", m.seed}, {"loss_curve", curve}};
}

TrainingMeta training_meta_from_json(const json& j) {
  TrainingMeta m;
  m.steps = j.at("steps").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& r : j.at("loss_curve")) {
    m.loss_curve.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>()});
  }
  return m;
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
  std::ostringstream ss;
  ss << "step,train_loss,val_loss\n" << std::setprecision(10);
  for (const auto& r : curve) ss << r.step << ',' << r.train_loss << ',' << r.val_loss << '\n';
  return ss.str();
}

fs::path sidecar_path(const fs::path& weights) { return fs::path(weights.string() + ".json"); }
fs::path loss_csv_path(const fs::path& weights) { return fs::path(weights.string() + ".loss.csv"); }

}  // namespace dpsmri::checkpoint
