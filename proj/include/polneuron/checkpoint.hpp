#pragma once

// Checkpoint container:
//   8 bytes   magic "PNLMCKPT"
//   8 bytes   header length N, little-endian uint64
//   N bytes   UTF-8 JSON header {format_version, config, variant, tensors, metadata}
//   then each tensor of the header's list, row-major little-endian float64.

#include <filesystem>
#include <nlohmann/json.hpp>

#include "polneuron/tinylm.hpp"

namespace polneuron::tinylm {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ModelVariant variant;
  // Free-form extras (e.g. the tokenizer vocabulary); may be null.
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ModelVariant& variant,
                     const nlohmann::json& metadata = nullptr);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads and checks the stored config against `expected` (shape only).
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace polneuron::tinylm
