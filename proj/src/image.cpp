#include "resa/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "resa/lane.hpp"

namespace resa {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_png expects (3,H,W), got " + dims_to_string(image.dims()));
  }
  const Index h = image.dim(1);
  const Index w = image.dim(2);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w * 3));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) row[static_cast<std::size_t>(x * 3 + c)] = to_byte(image[(c * h + y) * w + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Tensor<float> out;
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto w = static_cast<Index>(png_get_image_width(png, info));
  const auto h = static_cast<Index>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w * 3)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG layout in " + path.string());
  }
  out = Tensor<float>({3, h, w});
  row.resize(static_cast<std::size_t>(w * 3));
  for (Index y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        out[(c * h + y) * w + x] = static_cast<float>(row[static_cast<std::size_t>(x * 3 + c)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void quantize_8bit(Tensor<float>& image) {
  for (float& v : image.values()) v = static_cast<float>(to_byte(v)) / 255.0f;
}

void blend_pixel(Tensor<float>& image, Index y, Index x, const Rgb& rgb, float alpha) {
  const Index h = image.dim(1);
  const Index w = image.dim(2);
  if (y < 0 || y >= h || x < 0 || x >= w) return;
  for (Index c = 0; c < 3; ++c) {
    float& v = image[(c * h + y) * w + x];
    v = (1.0f - alpha) * v + alpha * rgb[static_cast<std::size_t>(c)];
  }
}

}  // namespace resa
