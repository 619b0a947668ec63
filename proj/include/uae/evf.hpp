#pragma once

// EVF container, little-endian:
//   "EVF1" | u8 kind (1 scalar, 2 label, 3 embedding) | u8 dtype (1 f32, 2 u16)
//   | u16 reserved=0 | u32 nx, ny, nz | u32 channels | f32 sx, sy, sz
//   | f32 ox, oy, oz | u8 normalized | 7 zero bytes
//   | payload in (z, y, x, c) order | u32 CRC32(payload)
//
// Geometry is stored as f32; values not representable in f32 are rounded on
// write.

#include "uae/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace uae {

using AnyVolume = std::variant<ScalarVolume, LabelVolume, EmbeddingVolume>;

inline constexpr std::size_t kEvfHeaderSize = 56;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_evf(const AnyVolume& vol);
AnyVolume decode_evf(std::span<const std::uint8_t> bytes);

void write_volume(const AnyVolume& vol, const std::filesystem::path& path);
AnyVolume read_volume(const std::filesystem::path& path);

ScalarVolume read_scalar_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);
EmbeddingVolume read_embedding_volume(const std::filesystem::path& path);

/// Reads a whole file; throws IoError.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace uae
