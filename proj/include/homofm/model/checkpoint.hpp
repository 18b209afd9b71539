#pragma once

// Checkpoint container.
//
//   "HFMC"                      magic
//   version                     u32 (1)
//   architecture text           string (u32 length + bytes)
//   architecture hash           u64, FNV-1a of the text
//   step                        u64
//   parameter count             u32
//   count x (name string, f32 tensor record)

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "homofm/model/params.hpp"

namespace homofm::model {

struct Checkpoint {
  Model<float> model;
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, std::uint64_t step);
/// FormatError on malformed bytes or a hash that does not match the stored
/// architecture text.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks that the stored architecture hashes equal to
/// `expected`; throws IncompatibleCheckpointError otherwise.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace homofm::model
