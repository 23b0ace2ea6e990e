#pragma once

#include "dialograph/mrdan.hpp"

#include <optional>
#include <string>

namespace dialograph {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Manifest JSON at `path` plus a float32 little-endian blob at `path`.bin.
// Round-trips value-exact at single precision.
void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::string& path);

struct LoadedCheckpoint {
    ModelParams params;
    ModelConfig config;
};

// When `expected` is given, every manifest config field must match or the
// load fails with a diff listing the fields.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

} // namespace dialograph
