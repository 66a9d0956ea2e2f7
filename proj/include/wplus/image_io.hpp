#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wplus/image.hpp"

namespace wplus {

/// 8-bit RGB / RGBA / gray PNG decoding; alpha is dropped, gray is replicated.
Rgb8Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Rgb8Image& img);

Rgb8Image load_png_rgb8(const std::filesystem::path& path);
void save_png_rgb8(const Rgb8Image& img, const std::filesystem::path& path);

ImageTensor load_image(const std::filesystem::path& path);
void save_image(const ImageTensor& img, const std::filesystem::path& path);

}  // namespace wplus
