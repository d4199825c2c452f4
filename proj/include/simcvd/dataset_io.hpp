#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "simcvd/synth_data.hpp"

namespace simcvd {

/// Binary grid files: 48-byte little-endian header followed by the raw values (z fastest).
///   bytes 0-3   magic "SCVG"
///   bytes 4-7   u32 format version (1)
///   byte  8     dtype tag: 1 = float32, 2 = uint8
///   bytes 9-11  reserved (zero)
///   bytes 12-23 u32 dims nx, ny, nz
///   bytes 24-47 f64 spacing x, y, z
inline constexpr std::uint32_t kGridFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::uint8_t kDtypeUint8 = 2;

void write_real_grid(const std::filesystem::path& path, const RealGrid& grid, const Spacing& spacing);
void write_mask_grid(const std::filesystem::path& path, const MaskGrid& grid, const Spacing& spacing);
RealGrid read_real_grid(const std::filesystem::path& path, Spacing* spacing = nullptr);
MaskGrid read_mask_grid(const std::filesystem::path& path, Spacing* spacing = nullptr);

std::uint32_t file_crc32(const std::filesystem::path& path);

/// Writes labeled/, unlabeled/, test/ subdirectories plus manifest.json. `extra` is stored
/// under the manifest's "generator" key.
nlohmann::json save_split(const std::filesystem::path& dir, const DatasetSplit& split,
                          const nlohmann::json& extra = nlohmann::json::object());

DatasetSplit load_split(const std::filesystem::path& dir);

/// Recomputes every file checksum listed in the manifest; returns false on any mismatch.
bool verify_split(const std::filesystem::path& dir);

}  // namespace simcvd
