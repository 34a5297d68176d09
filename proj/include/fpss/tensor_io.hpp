#pragma once

#include "fpss/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace fpss {

// FPSS tensor container:
//   bytes 0-3  magic "FPSS"
//   byte  4    version (1)
//   byte  5    dtype (0 = f32 little-endian, 1 = u8)
//   byte  6    ndim (2 or 3)
//   ndim x u32 little-endian dims, (H, W[, D]) order
//   row-major payload
inline constexpr std::uint8_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 0, U8 = 1 };

/// Decoded tensor. f32 3-d is a FeatureMap, f32 2-d a RealGrid, u8 2-d a BinaryMask, u8 3-d a MaskStack.
using AnyTensor = std::variant<FeatureMap, RealGrid, BinaryMask, MaskStack>;

AnyTensor decode_tensor(std::span<const std::uint8_t> bytes);
AnyTensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(const FeatureMap& map);
std::vector<std::uint8_t> encode_tensor(const RealGrid& grid);
std::vector<std::uint8_t> encode_tensor(const ProbabilityMap& map);
std::vector<std::uint8_t> encode_tensor(const BinaryMask& mask);
std::vector<std::uint8_t> encode_tensor(const MaskStack& stack);
std::vector<std::uint8_t> encode_tensor(const LabelMap& labels);

template <typename T>
void write_tensor(const std::filesystem::path& path, const T& tensor);

// Typed readers; a tensor of the wrong kind raises SchemaViolation.
FeatureMap read_feature_map(const std::filesystem::path& path);
BinaryMask read_mask(const std::filesystem::path& path);
RealGrid read_real_grid(const std::filesystem::path& path);
MaskStack read_mask_stack(const std::filesystem::path& path);
/// u8 (H, W) tensor read without binarisation.
LabelMap read_label_map(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). Nonzero pixels are foreground; written as 255.
BinaryMask read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const BinaryMask& mask);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace fpss
