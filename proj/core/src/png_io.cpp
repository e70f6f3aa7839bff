#include "landseg/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "landseg/common.hpp"

namespace landseg::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw data_error("cannot open PNG: " + path);

  png_structp png_ptr = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png_ptr) throw data_error("png_create_read_struct failed");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  if (!info_ptr) {
    png_destroy_read_struct(&png_ptr, nullptr, nullptr);
    throw data_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    throw data_error("failed to decode PNG: " + path);
  }

  png_init_io(png_ptr, fp.get());
  png_read_info(png_ptr, info_ptr);

  const png_uint_32 w = png_get_image_width(png_ptr, info_ptr);
  const png_uint_32 h = png_get_image_height(png_ptr, info_ptr);
  const int bit_depth = png_get_bit_depth(png_ptr, info_ptr);
  const int color_type = png_get_color_type(png_ptr, info_ptr);

  // Normalize to 8-bit gray or RGB.
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png_ptr);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png_ptr);
  if (png_get_valid(png_ptr, info_ptr, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png_ptr);
  if (bit_depth == 16) png_set_strip_16(png_ptr);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png_ptr);
  png_read_update_info(png_ptr, info_ptr);

  const int channels = png_get_channels(png_ptr, info_ptr);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
    throw data_error("unsupported PNG channel count in " + path);
  }

  Image8 img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(h) * w * channels);

  std::vector<png_bytep> rows(h);
  const std::size_t stride = static_cast<std::size_t>(w) * channels;
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = img.pixels.data() + r * stride;
  png_read_image(png_ptr, rows.data());
  png_read_end(png_ptr, nullptr);
  png_destroy_read_struct(&png_ptr, &info_ptr, nullptr);
  return img;
}

namespace {

void write_impl(const std::string& path, int height, int width, int channels, int bit_depth,
                const std::uint8_t* bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw data_error("cannot write PNG: " + path);

  png_structp png_ptr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png_ptr) throw data_error("png_create_write_struct failed");
  png_infop info_ptr = png_create_info_struct(png_ptr);
  if (!info_ptr) {
    png_destroy_write_struct(&png_ptr, nullptr);
    throw data_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png_ptr))) {
    png_destroy_write_struct(&png_ptr, &info_ptr);
    throw data_error("failed to encode PNG: " + path);
  }

  png_init_io(png_ptr, fp.get());
  const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png_ptr, info_ptr, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png_ptr, info_ptr);

  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r)
    rows[static_cast<std::size_t>(r)] = const_cast<png_bytep>(bytes + static_cast<std::size_t>(r) * stride);
  png_write_image(png_ptr, rows.data());
  png_write_end(png_ptr, nullptr);
  png_destroy_write_struct(&png_ptr, &info_ptr);
}

}  // namespace

void write_rgb8(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels) {
  check(pixels.size() == static_cast<std::size_t>(height) * width * 3, "write_rgb8: buffer size mismatch");
  write_impl(path, height, width, 3, 8, pixels.data());
}

void write_gray8(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels) {
  check(pixels.size() == static_cast<std::size_t>(height) * width, "write_gray8: buffer size mismatch");
  write_impl(path, height, width, 1, 8, pixels.data());
}

void write_gray16(const std::string& path, int height, int width, const std::vector<std::uint16_t>& pixels) {
  check(pixels.size() == static_cast<std::size_t>(height) * width, "write_gray16: buffer size mismatch");
  // PNG stores 16-bit samples big-endian.
  std::vector<std::uint8_t> bytes(pixels.size() * 2);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(pixels[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(pixels[i] & 0xff);
  }
  write_impl(path, height, width, 1, 16, bytes.data());
}

}  // namespace landseg::png
