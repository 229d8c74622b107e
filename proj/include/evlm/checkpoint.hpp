#pragma once

#include <filesystem>
#include <string>

#include "evlm/param_store.hpp"

namespace evlm {

// Checkpoint container: a directory holding
//   manifest.json  - ordered tensor table (name, shape, dtype, byte offset)
//   params.bin     - raw little-endian float32 values, concatenated in
//                    manifest order
//   config.json    - optional free-form configuration blob
//
// Values are stored as float32; reading widens back to float64, so
// write -> read -> write reproduces params.bin byte for byte.

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params,
                     const std::string& config_json = "");

/// Loads values into an existing store; names and shapes must match the
/// manifest exactly.
void load_checkpoint(const std::filesystem::path& dir, ParamStore& params);

/// Reads the config.json blob saved next to the weights ("" if absent).
std::string load_checkpoint_config(const std::filesystem::path& dir);

} // namespace evlm
