#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fairlatent/trainer.hpp"

namespace fairlatent {

/// FLCK layout: magic, u32 version, u64-length-prefixed key=value header,
/// then records until end of file, each (u32 name length, name, u32 rank, u64
/// dims, payload). The payload is float32 for f32 runs and float64 otherwise.
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace fairlatent
