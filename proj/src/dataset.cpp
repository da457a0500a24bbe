#include "dpsmri/dataset.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <sstream>

namespace dpsmri::io {

static_assert(std::endian::native == std::endian::little, "float files assume a little-endian host");

namespace fs = std::filesystem;

namespace {

void write_floats(const fs::path& path, const std::vector<float>& buf) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("write failed", path.string());
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading", path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(float)) {
    throw IoError("size mismatch (expected " + std::to_string(count * sizeof(float)) +
                      " bytes, found " + std::to_string(bytes) + ")",
                  path.string());
  }
  in.seekg(0);
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  return buf;
}

}  // namespace

void write_f32(const fs::path& path, const Image& img) {
  std::vector<float> buf(static_cast<std::size_t>(img.size()));
  for (long k = 0; k < img.size(); ++k) buf[static_cast<std::size_t>(k)] = static_cast<float>(img.data()[k]);
  write_floats(path, buf);
}

Image read_f32(const fs::path& path, Shape shape) {
  auto buf = read_floats(path, static_cast<std::size_t>(shape.size()));
  Image img(shape.rows, shape.cols);
  for (long k = 0; k < img.size(); ++k) img.data()[k] = buf[static_cast<std::size_t>(k)];
  return img;
}

void write_c64(const fs::path& path, const KSpace& k) {
  std::vector<float> buf(static_cast<std::size_t>(2 * k.size()));
  for (long i = 0; i < k.size(); ++i) {
    buf[static_cast<std::size_t>(2 * i)] = static_cast<float>(k.data()[i].real());
    buf[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(k.data()[i].imag());
  }
  write_floats(path, buf);
}

KSpace read_c64(const fs::path& path, Shape shape) {
  auto buf = read_floats(path, static_cast<std::size_t>(2 * shape.size()));
  KSpace k(shape.rows, shape.cols);
  for (long i = 0; i < k.size(); ++i) {
    k.data()[i] = {buf[static_cast<std::size_t>(2 * i)], buf[static_cast<std::size_t>(2 * i + 1)]};
  }
  return k;
}

std::uintmax_t file_size(const fs::path& path) {
  std::error_code ec;
  auto n = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat", path.string());
  return n;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out << text;
  if (!out) throw IoError("write failed", path.string());
}

}  // namespace dpsmri::io

namespace dpsmri::dataset {

namespace fs = std::filesystem;
using nlohmann::json;
using phantoms::Split;

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

const ManifestEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw InvalidArgument("no sample with id '" + id + "' in manifest");
}

namespace {

json shape_json(Shape s) { return json::array({s.rows, s.cols}); }
Shape shape_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

std::string manifest_to_text(const DatasetManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["generator_seed"] = m.generator_seed;
  if (m.provenance) {
    j["provenance"] = {{"denoised_from", m.provenance->denoised_from},
                       {"checkpoint_hash", m.provenance->checkpoint_hash}};
  }
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je;
    je["id"] = e.id;
    je["path"] = e.path;
    if (e.clean_path) je["clean_path"] = *e.clean_path;
    je["label"] = std::string(phantoms::name(e.label));
    je["shape"] = shape_json(e.shape);
    je["native_size"] = shape_json(e.native_size);
    je["split"] = std::string(phantoms::name(e.split));
    je["noise_sigma_true"] = e.noise_sigma_true ? json(*e.noise_sigma_true) : json(nullptr);
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const fs::path& dir) {
  io::write_text(dir / kManifestName, manifest_to_text(manifest));
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest (") + e.what() + ")", path.string());
  }
  DatasetManifest m;
  m.root = dir;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kSchemaVersion) {
      throw IoError("unsupported manifest schema_version " + std::to_string(m.schema_version),
                    path.string());
    }
    m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    if (j.contains("provenance")) {
      m.provenance = Provenance{j["provenance"].at("denoised_from").get<std::string>(),
                                j["provenance"].at("checkpoint_hash").get<std::string>()};
    }
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.path = je.at("path").get<std::string>();
      if (je.contains("clean_path")) e.clean_path = je["clean_path"].get<std::string>();
      e.label = phantoms::parse_class(je.at("label").get<std::string>());
      e.shape = shape_from(je.at("shape"));
      e.native_size = shape_from(je.at("native_size"));
      e.split = phantoms::parse_split(je.at("split").get<std::string>());
      if (!je.at("noise_sigma_true").is_null()) e.noise_sigma_true = je["noise_sigma_true"].get<double>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest (") + e.what() + ")", path.string());
  }
  return m;
}

phantoms::ImageSample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  phantoms::ImageSample s;
  s.id = e.id;
  s.pixels = io::read_f32(m.root / e.path, e.shape);
  s.label = e.label;
  s.native_size = e.native_size;
  s.noise_sigma_true = e.noise_sigma_true;
  s.split = e.split;
  return s;
}

Image load_clean(const DatasetManifest& m, const ManifestEntry& e) {
  if (!e.clean_path) throw InvalidArgument("sample '" + e.id + "' has no clean truth");
  return io::read_f32(m.root / *e.clean_path, e.shape);
}

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  if (config.sizes.empty()) throw InvalidArgument("build_dataset: empty size list");
  if (config.sigma_min < 0 || config.sigma_max < config.sigma_min) {
    throw InvalidArgument("build_dataset: invalid sigma range");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "samples", ec);
  fs::create_directories(out_dir / "clean", ec);
  if (ec || !fs::is_directory(out_dir / "samples")) {
    throw IoError("cannot create dataset directory", out_dir.string());
  }

  DatasetManifest m;
  m.generator_seed = config.seed;
  m.root = out_dir;
  std::uint64_t index = 0;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    auto it = config.per_class_counts.find(split);
    const int count = it == config.per_class_counts.end() ? 0 : it->second;
    for (phantoms::ClassLabel label : phantoms::kAllClasses) {
      for (int n = 0; n < count; ++n, ++index) {
        Rng rng(derive_seed(config.seed, index));
        std::uniform_int_distribution<std::size_t> pick(0, config.sizes.size() - 1);
        const Shape size{config.sizes[pick(rng)], config.sizes[pick(rng)]};
        const double sigma = std::uniform_real_distribution<double>(config.sigma_min, config.sigma_max)(rng);
        const std::uint64_t phantom_seed = rng();
        const std::uint64_t noise_seed = rng();

        auto clean = phantoms::generate_phantom(label, size, phantom_seed);
        auto noisy = phantoms::corrupt_with_noise(clean, sigma, noise_seed);

        char id[16];
        std::snprintf(id, sizeof id, "s%05llu", static_cast<unsigned long long>(index));
        ManifestEntry e;
        e.id = id;
        e.path = "samples/" + e.id + ".f32";
        e.clean_path = "clean/" + e.id + ".f32";
        e.label = label;
        e.shape = size;
        e.native_size = size;
        e.split = split;
        e.noise_sigma_true = sigma;
        io::write_f32(out_dir / e.path, noisy.pixels);
        io::write_f32(out_dir / *e.clean_path, clean.pixels);
        m.entries.push_back(std::move(e));
      }
    }
  }
  save_manifest(m, out_dir);
  return m;
}

}  // namespace dpsmri::dataset
