#pragma once

#include <filesystem>

#include "transmat/types.hpp"

namespace transmat::io {

// PNG readers accept 8-bit and 16-bit files and normalize by 255 / 65535.
ImageRGB read_rgb(const std::filesystem::path& path);
AlphaMatte read_alpha(const std::filesystem::path& path);
GrayPlane8 read_gray8(const std::filesystem::path& path);
Trimap read_trimap(const std::filesystem::path& path);

/// (height, width) of an image file without keeping the pixels.
std::pair<int64_t, int64_t> read_shape(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const ImageRGB& image);
void write_alpha8(const std::filesystem::path& path, const AlphaMatte& alpha);
void write_alpha16(const std::filesystem::path& path, const AlphaMatte& alpha);
void write_trimap(const std::filesystem::path& path, const Trimap& trimap);

}  // namespace transmat::io
