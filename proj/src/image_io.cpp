#include "mlcam/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace mlcam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int h, int w, int bit_depth,
               int color_type, const std::vector<std::uint8_t*>& rows) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("png: cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png: writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png: info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  // Fixed settings keep encodes byte-identical across runs.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& pixels) {
  if (static_cast<std::size_t>(h) * w != pixels.size()) {
    throw DimensionError("png: gray8 pixel count mismatch");
  }
  std::vector<std::uint8_t> buf = pixels;
  std::vector<std::uint8_t*> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w;
  write_png(path, h, w, 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_gray1(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& binary) {
  if (static_cast<std::size_t>(h) * w != binary.size()) {
    throw DimensionError("png: gray1 pixel count mismatch");
  }
  const int stride = (w + 7) / 8;
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(h) * stride, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (binary[static_cast<std::size_t>(y) * w + x]) {
        packed[static_cast<std::size_t>(y) * stride + x / 8] |=
            static_cast<std::uint8_t>(0x80 >> (x % 8));
      }
    }
  }
  std::vector<std::uint8_t*> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = packed.data() + static_cast<std::size_t>(y) * stride;
  }
  write_png(path, h, w, 1, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels) {
  if (static_cast<std::size_t>(h) * w * 3 != pixels.size()) {
    throw DimensionError("png: rgb8 pixel count mismatch");
  }
  std::vector<std::uint8_t> buf = pixels;
  std::vector<std::uint8_t*> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w * 3;
  }
  write_png(path, h, w, 8, PNG_COLOR_TYPE_RGB, rows);
}

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("png: cannot open " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw DataError("png: " + path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png: reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png: info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: decode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Normalize to 8-bit gray or rgb.
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: unsupported channel count in " + path.string());
  }

  ImageU8 img;
  img.h = h;
  img.w = w;
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(h) * w * channels);
  std::vector<std::uint8_t*> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

ImageU8 to_gray(const ImageU8& img) {
  if (img.channels == 1) return img;
  ImageU8 out;
  out.h = img.h;
  out.w = img.w;
  out.channels = 1;
  out.pixels.resize(static_cast<std::size_t>(img.h) * img.w);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
  }
  return out;
}

}  // namespace mlcam
