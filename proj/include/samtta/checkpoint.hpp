#pragma once

// Binary checkpoint, all integers u32 little-endian:
//   "TTAF" | version=1 | n_fields | (name_len name value)* |
//   n_tensors | (name_len name rank dims... f64-LE payload)*
// Tensors are written sorted by name.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "samtta/model.hpp"

namespace samtta {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const SegModel& model);
SegModel deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
SegModel load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the serialized bytes.
std::uint64_t model_hash(const SegModel& model);

}  // namespace samtta
