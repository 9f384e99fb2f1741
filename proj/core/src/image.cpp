#include "apap/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "apap/error.hpp"

namespace apap {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open PNG " + path.string());

  unsigned char header[8] = {};
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw ParseError("not a PNG file: " + path.string());

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message,
                                           png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng allocation failed");
  }

  Image image;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("PNG decode failed for " + path.string() + ": " + message);
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  image = Image(width, height, 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(x, y, c) = rows[y][x * 3 + c] / 255.0f;
      }
    }
  }
  return image;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3 && image.channels != 1)
    throw InvalidInputError("write_png expects 1 or 3 channels");
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot write PNG " + path.string());

  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message,
                                            png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng allocation failed");
  }

  std::vector<unsigned char> buffer(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.data[i], 0.0f, 1.0f);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y)
    rows[y] = buffer.data() + static_cast<std::size_t>(y) * image.width *
                                  image.channels;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed for " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode_float32_le(std::span<const float> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    bytes[4 * i + 0] = static_cast<std::uint8_t>(bits & 0xffu);
    bytes[4 * i + 1] = static_cast<std::uint8_t>((bits >> 8) & 0xffu);
    bytes[4 * i + 2] = static_cast<std::uint8_t>((bits >> 16) & 0xffu);
    bytes[4 * i + 3] = static_cast<std::uint8_t>((bits >> 24) & 0xffu);
  }
  return bytes;
}

std::vector<float> decode_float32_le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0)
    throw ParseError("float32 payload length " + std::to_string(bytes.size()) +
                     " is not a multiple of 4");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

void write_raw_float32(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = encode_float32_le(image.data);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

double half_squared_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InvalidInputError("image shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return 0.5 * sum;
}

}  // namespace apap
