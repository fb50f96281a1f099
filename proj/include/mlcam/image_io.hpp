#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mlcam/error.hpp"

namespace mlcam {

/// Decoded 8-bit image, row-major, 1 (gray) or 3 (rgb) channels interleaved.
struct ImageU8 {
  int h = 0;
  int w = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// 8-bit grayscale PNG.
void write_png_gray8(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& pixels);

// 1-bit grayscale PNG from 0/1 values.
void write_png_gray1(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& binary);

// 8-bit RGB PNG from interleaved r,g,b.
void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels);

// Decodes any PNG to gray8 or rgb8 (palette/low-bit/16-bit/alpha are
// normalized away). Throws DataError on undecodable input.
ImageU8 read_png(const std::filesystem::path& path);

// Luma conversion when channels == 3; identity on gray.
ImageU8 to_gray(const ImageU8& img);

}  // namespace mlcam
