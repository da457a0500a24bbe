#pragma once

#include "dpsmri/common.hpp"
#include "dpsmri/phantoms.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dpsmri::io {

/// Flat little-endian float32, row-major, no header.
void write_f32(const std::filesystem::path& path, const Image& img);
Image read_f32(const std::filesystem::path& path, Shape shape);
/// Interleaved real/imag little-endian float32, row-major, no header.
void write_c64(const std::filesystem::path& path, const KSpace& k);
KSpace read_c64(const std::filesystem::path& path, Shape shape);
/// Number of bytes in a file; throws IoError when it cannot be opened.
std::uintmax_t file_size(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dpsmri::io

namespace dpsmri::dataset {

inline constexpr int kSchemaVersion = 1;

struct ManifestEntry {
  std::string id;
  std::string path;                       // relative to the dataset root
  std::optional<std::string> clean_path;  // synthetic ground truth, when known
  phantoms::ClassLabel label = phantoms::ClassLabel::FseAx;
  Shape shape{};
  Shape native_size{};
  phantoms::Split split = phantoms::Split::Train;
  std::optional<double> noise_sigma_true;
};

struct Provenance {
  std::string denoised_from;
  std::string checkpoint_hash;
};

struct DatasetManifest {
  int schema_version = kSchemaVersion;
  std::uint64_t generator_seed = 0;
  std::vector<ManifestEntry> entries;
  std::optional<Provenance> provenance;
  std::filesystem::path root;  // directory holding manifest.json; not serialized

  std::vector<const ManifestEntry*> split(phantoms::Split s) const;
  const ManifestEntry& find(const std::string& id) const;
};

struct DatasetConfig {
  std::map<phantoms::Split, int> per_class_counts{
      {phantoms::Split::Train, 10}, {phantoms::Split::Val, 2}, {phantoms::Split::Test, 2}};
  std::vector<int> sizes{48, 56, 64};
  double sigma_min = 0.03;
  double sigma_max = 0.1;
  std::uint64_t seed = 0;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Generates clean phantoms, corrupts them with noise and writes samples,
/// clean truth and manifest.json under `out_dir`. Sample k uses the RNG
/// stream derive_seed(seed, k), so the output is independent of generation
/// order.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);
std::string manifest_to_text(const DatasetManifest& manifest);

phantoms::ImageSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);
/// Throws InvalidArgument if the entry carries no clean truth.
Image load_clean(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace dpsmri::dataset
