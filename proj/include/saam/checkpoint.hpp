#pragma once

#include <string>

#include "saam/model.hpp"

namespace saam {

// Binary checkpoint: magic "SAAM", u32 version, length-prefixed model-config
// echo, named-tensor table (u32 name length + UTF-8 name, u32 dtype code 0 =
// f32, u32 rank, u32 dims, raw little-endian f32 data), trailing CRC-32
// (IEEE) of all preceding bytes. One file serves every scale.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(Model<float>& model, const std::string& path);

// Rebuilds the architecture from the config echo, then fills parameters.
Model<float> load_checkpoint(const std::string& path);

// Fills an existing model; every tensor must match by name and shape.
void load_checkpoint_into(Model<float>& model, const std::string& path);

ModelConfig checkpoint_config(const std::string& path);

}  // namespace saam
