#pragma once

// Checkpoint = "<stem>.json" manifest + "<stem>.bin" blob of little-endian
// f32 values, arrays concatenated in manifest order (lexicographic by name).
//
//   {"format_version": 1,
//    "arrays": [{"name", "shape": [r, c], "dtype": "f32", "byte_offset", "byte_len"}],
//    "training_step": N, "config_hash": "<16 hex>", "config": {...}}
//
// "config" is the resolved run config; readers that only need arrays may
// ignore it.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "safeloco/autodiff.hpp"

namespace safeloco {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ad::ParamStore arrays;
  long training_step = 0;
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
};

// FNV-1a over the compact JSON dump, as 16 lowercase hex digits.
std::string config_hash(const nlohmann::json& config);

// Writes "<stem>.json" and "<stem>.bin"; creates parent directories.
void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);

// Accepts the stem, the .json or the .bin path. Throws MissingArtifact when
// either file is absent and ConfigError on a malformed manifest. When
// expected_hash is non-empty and differs, a warning goes to stderr.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash = "");

}  // namespace safeloco
