#pragma once

#include <filesystem>

#include "tuplenet/hydra.hpp"
#include "tuplenet/model.hpp"

namespace tuplenet {

// Directory with model.json (layer specs, shapes, frozen flags) and params.bin
// (float32 little-endian tensors in declaration order).
void save_model(const std::filesystem::path& dir, Model& model);
Model load_model(const std::filesystem::path& dir);

// A filter bank is stored as a one-layer model.
void save_bank(const std::filesystem::path& dir, const ConvFilterBank& bank);
ConvFilterBank load_bank(const std::filesystem::path& dir);

void save_hydra(const std::filesystem::path& dir, const HydraLayer& layer);
HydraLayer load_hydra(const std::filesystem::path& dir);

}  // namespace tuplenet
