#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "cdseg/error.hpp"
#include "cdseg/io_store.hpp"

namespace cdseg {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Rows are handed to libpng as raw big-endian byte rows; 16-bit samples are
// packed here so no libpng transform is involved.
void write_png_rows(const fs::path& path, int width, int height, int color_type, int bit_depth,
                    const std::vector<std::uint8_t>& packed, std::size_t row_bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      fail(ErrorKind::kIo, "libpng initialization failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
      rows[y] = const_cast<png_bytep>(packed.data() + static_cast<std::size_t>(y) * row_bytes);
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      fail(ErrorKind::kIo, "libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename to " + path.string() + ": " + ec.message());
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // as stored, 16-bit big-endian
};

RawPng read_png_raw(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorKind::kIo, "cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    fail(ErrorKind::kFormat, path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kIo, "libpng initialization failed");
  }
  RawPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kFormat, "libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.bytes.resize(row_bytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png(const fs::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) fail(ErrorKind::kValidation, "Image8 needs 1 or 3 channels");
  const std::size_t row = static_cast<std::size_t>(image.width) * image.channels;
  if (image.pixels.size() != row * image.height) fail(ErrorKind::kShapeMismatch, "Image8 buffer size");
  write_png_rows(path, image.width, image.height,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, 8, image.pixels, row);
}

void write_png(const fs::path& path, const Image16& image) {
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  if (image.pixels.size() != n) fail(ErrorKind::kShapeMismatch, "Image16 buffer size");
  std::vector<std::uint8_t> packed(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    packed[2 * i] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
    packed[2 * i + 1] = static_cast<std::uint8_t>(image.pixels[i] & 0xff);
  }
  write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, 16, packed,
                 2 * static_cast<std::size_t>(image.width));
}

Image8 read_png8(const fs::path& path) {
  RawPng raw = read_png_raw(path);
  if (raw.bit_depth != 8) fail(ErrorKind::kFormat, path.string() + ": expected an 8-bit PNG");
  return Image8{raw.width, raw.height, raw.channels, std::move(raw.bytes)};
}

Image16 read_png16(const fs::path& path) {
  RawPng raw = read_png_raw(path);
  if (raw.bit_depth != 16 || raw.channels != 1) {
    fail(ErrorKind::kFormat, path.string() + ": expected a 16-bit single-channel PNG");
  }
  Image16 out{raw.width, raw.height, {}};
  out.pixels.resize(raw.bytes.size() / 2);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint16_t>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]);
  }
  return out;
}

}  // namespace cdseg
