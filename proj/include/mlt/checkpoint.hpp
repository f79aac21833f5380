#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "mlt/model.hpp"

namespace mlt {

// Checkpoint layout, integers little-endian:
//   "MLTC" | u64 header length | JSON header | payload
// The header holds {"format", "version", "config", "parameters": [{name,
// shape, offset, bytes}]}, offsets relative to the payload start. The
// payload is the concatenation of "MLT1" tensors in manifest order.
inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'T', 'C'};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path);

/// Throws CorruptFileError on a malformed file and ConfigError when `expected`
/// is given and differs from the stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

/// Parsed JSON header only.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace mlt
