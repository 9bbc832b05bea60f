#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lrpgraph/network.hpp"

namespace lrp {

// LRPW weight container, little-endian throughout:
//
//   "LRPW"                       magic
//   u32 version                  = 1
//   u32 tensor_count
//   per tensor:
//     u16 name_length, name      UTF-8
//     u8 ndim, ndim x u32 dims
//     u8 dtype                   0 = f32
//     raw data                   numel x f32
//   u32 crc32                    CRC-32 (IEEE) of every preceding byte
inline constexpr std::uint32_t kWeightFormatVersion = 1;

// Throws BadMagicError, VersionMismatchError, TruncatedError,
// ChecksumError, UnsupportedDtypeError or LoaderError.
ParameterStore parse_weights(std::span<const std::uint8_t> bytes);
ParameterStore load_weights(const std::filesystem::path& path);

// Tensors are written in name order.
std::vector<std::uint8_t> serialize_weights(const ParameterStore& params);
void save_weights(const std::filesystem::path& path, const ParameterStore& params);

}  // namespace lrp
