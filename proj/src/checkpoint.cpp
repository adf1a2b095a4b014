#include "safeloco/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <vector>

#include "safeloco/errors.hpp"

namespace safeloco {

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

namespace fs = std::filesystem;

namespace {

fs::path stem_of(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".bin") return p.parent_path() / p.stem();
  return p;
}

fs::path with_ext(const fs::path& stem, const char* ext) { return fs::path(stem.string() + ext); }

}  // namespace

std::string config_hash(const nlohmann::json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const fs::path& stem_in, const Checkpoint& ckpt) {
  const fs::path stem = stem_of(stem_in);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  nlohmann::json arrays = nlohmann::json::array();
  std::vector<float> blob;
  blob.reserve(ckpt.arrays.scalar_count());
  for (const auto& [name, m] : ckpt.arrays.entries()) {
    const std::size_t offset = blob.size() * sizeof(float);
    for (Eigen::Index i = 0; i < m.size(); ++i) blob.push_back(static_cast<float>(m.data()[i]));
    arrays.push_back({{"name", name},
                      {"shape", {m.rows(), m.cols()}},
                      {"dtype", "f32"},
                      {"byte_offset", offset},
                      {"byte_len", static_cast<std::size_t>(m.size()) * sizeof(float)}});
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"arrays", std::move(arrays)},
                             {"training_step", ckpt.training_step},
                             {"config_hash", ckpt.config_hash},
                             {"config", ckpt.config}};

  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!bin) throw std::runtime_error("failed writing " + with_ext(stem, ".bin").string());
  std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
  js << manifest.dump(2) << "\n";
  if (!js) throw std::runtime_error("failed writing " + with_ext(stem, ".json").string());
}

Checkpoint load_checkpoint(const fs::path& path, const std::string& expected_hash) {
  const fs::path stem = stem_of(path);
  const fs::path js_path = with_ext(stem, ".json");
  const fs::path bin_path = with_ext(stem, ".bin");
  if (!fs::exists(js_path)) throw MissingArtifact("checkpoint manifest not found: " + js_path.string());
  if (!fs::exists(bin_path)) throw MissingArtifact("checkpoint blob not found: " + bin_path.string());

  nlohmann::json manifest;
  try {
    std::ifstream in(js_path);
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint manifest " + js_path.string() + ": " + e.what());
  }
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion)
    throw ConfigError("unsupported checkpoint format_version in " + js_path.string());

  std::ifstream bin(bin_path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Checkpoint out;
  out.training_step = manifest.value("training_step", 0L);
  out.config_hash = manifest.value("config_hash", std::string());
  if (manifest.contains("config")) out.config = manifest["config"];
  try {
    for (const auto& a : manifest.at("arrays")) {
      if (a.at("dtype").get<std::string>() != "f32") throw ConfigError("only f32 arrays are supported");
      const auto rows = a.at("shape").at(0).get<Eigen::Index>();
      const auto cols = a.at("shape").at(1).get<Eigen::Index>();
      const auto offset = a.at("byte_offset").get<std::size_t>();
      const auto len = a.at("byte_len").get<std::size_t>();
      if (len != static_cast<std::size_t>(rows * cols) * sizeof(float) || offset + len > bytes.size())
        throw ConfigError("array '" + a.at("name").get<std::string>() + "' has an inconsistent byte range");
      std::vector<float> vals(static_cast<std::size_t>(rows * cols));
      std::memcpy(vals.data(), bytes.data() + offset, len);
      ad::Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(vals[static_cast<std::size_t>(i)]);
      out.arrays.add(a.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint manifest " + js_path.string() + ": " + e.what());
  }
  if (!expected_hash.empty() && expected_hash != out.config_hash)
    std::cerr << "warning: checkpoint config_hash " << out.config_hash << " differs from expected "
              << expected_hash << "\n";
  return out;
}

}  // namespace safeloco
