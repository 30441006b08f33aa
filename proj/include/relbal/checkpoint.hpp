#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "relbal/parameters.hpp"

namespace relbal {

// Checkpoint container layout (all integers little-endian):
//
//   u8   version (kCheckpointVersion)
//   u8x4 magic "RBCK"
//   u32  entry count
//   per entry:
//     u32 name length, name bytes, u8 trainable flag,
//     u32 rank, u64 extent[rank], u64 byte offset into the data section
//   u64  data section length in bytes
//   data section: IEEE-754 doubles, little-endian, entries back to back
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes);

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace relbal
