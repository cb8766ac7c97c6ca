#pragma once

#include <cstdint>
#include <filesystem>

#include "groundkit/grid.hpp"

namespace groundkit::io {

// GKV1 raw container: little-endian header {magic "GKV1", u32 dtype code,
// u32 D, u32 H, u32 W} followed by D*H*W row-major values.
enum class DType : std::uint32_t { F32 = 1, I16 = 2, U8 = 3, F64 = 4 };

// Reads any supported dtype and converts to float.
Grid3<float> read_gkv(const std::filesystem::path& path);
void write_gkv(const std::filesystem::path& path, const Grid3<float>& volume);
void write_gkv(const std::filesystem::path& path, const Grid3<std::uint8_t>& volume);
Grid3<std::uint8_t> read_gkv_mask(const std::filesystem::path& path);

Image read_gkv_image(const std::filesystem::path& path);
void write_gkv_image(const std::filesystem::path& path, const Image& image);

// 8- or 16-bit grayscale PNG, scaled to [0, 1]. Color images are averaged.
Image read_png(const std::filesystem::path& path);
// Values are clamped to [0, 1] and written as 8-bit grayscale.
void write_png(const std::filesystem::path& path, const Image& image);
// Binary mask written as 0/255.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
// Any nonzero pixel is foreground.
Mask read_mask_png(const std::filesystem::path& path);

}  // namespace groundkit::io
