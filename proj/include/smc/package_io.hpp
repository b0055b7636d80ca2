#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smc/datagen.hpp"
#include "smc/expandable.hpp"
#include "smc/model.hpp"

namespace smc {

using Bytes = std::vector<std::uint8_t>;

// Envelope: 7-byte magic, version byte 0x01, 4-byte little-endian metadata
// length, canonical JSON metadata (sorted keys) holding a tensor directory,
// little-endian float32 blob, CRC32 of every preceding byte.
inline constexpr std::string_view kPackageMagic = "SMCPKG1";
inline constexpr std::string_view kModelMagic = "SMCMDL1";
inline constexpr std::string_view kDatasetMagic = "SMCDAT1";
inline constexpr std::uint8_t kFormatVersion = 0x01;

/// Full model plus the catalog ids its logits stand for.
struct ModelFile {
  ModelGraph model;
  std::vector<int> classes;
  Domain domain = Domain::A;

  friend bool operator==(const ModelFile&, const ModelFile&) = default;
};

/// Throws InvalidInput when any tensor is not finite.
Bytes encode_package(const SmcPackage& pkg);
Bytes encode_model(const ModelFile& file);
Bytes encode_dataset(const ShapeDataset& ds);

/// Throw UnknownFormat for empty input, a foreign magic or version, and
/// CorruptPackage for truncation, CRC mismatch or an inconsistent directory.
SmcPackage decode_package(std::span<const std::uint8_t> bytes);
ModelFile decode_model(std::span<const std::uint8_t> bytes);
ShapeDataset decode_dataset(std::span<const std::uint8_t> bytes);

/// Magic of an envelope, or "" when the bytes do not start with a known one.
std::string_view detect_format(std::span<const std::uint8_t> bytes);

/// CRC32 (polynomial 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace smc
