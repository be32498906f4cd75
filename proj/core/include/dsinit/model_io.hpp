#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dsinit/nn.hpp"

namespace dsinit::nn {

/// DSIN model container, all integers and floats little-endian:
///
///   "DSIN" | u32 version (=1)
///   u32 input rank | u32 dims...
///   u32 layer count
///   per layer: u8 kind tag | u32 dim count | u32 weight dims...
///              | f64 weights (row-major) | f64 biases (dims[0] values)
///
/// Layers without parameters carry a dim count of 0 and no payload. Kind
/// tags follow LayerKind.
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const Network& network);
Network decode_model(std::span<const std::uint8_t> bytes);

void save_model(const Network& network, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

}  // namespace dsinit::nn
