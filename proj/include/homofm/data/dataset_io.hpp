#pragma once

// Single-file dataset container.
//
//   "HFMD"                      magic
//   version                     u32 (1)
//   count                       u32
//   GenConfig echo              side u32, rho f64, shift u8, gamma f64,
//                               pattern u8, checker_cell u32, seed u64
//   count x sample record       source, target (f32 tensors),
//                               h_gt (f64 3x3 tensor), w_gt (f32 tensor),
//                               domain_source u8, domain_target u8

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "homofm/data/pairs.hpp"

namespace homofm::data {

struct Dataset {
  GenConfig config;
  std::vector<PairSample> samples;
};

/// Throws ConfigError for an empty sample list.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
/// All-or-nothing: any bad magic, truncation or trailing byte raises
/// FormatError with the offset, and no samples are returned.
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace homofm::data
