#include "crowdcount/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "crowdcount/error.hpp"
#include "crowdcount/tensor.hpp"

namespace crowdcount {

Image bilinear_resize(const Image& image, int out_height, int out_width) {
  require(out_height >= 1 && out_width >= 1, ErrorCode::Argument,
          "bilinear_resize: output size must be at least 1×1");
  require(!image.empty(), ErrorCode::Argument, "bilinear_resize: empty image");
  if (out_height == image.height && out_width == image.width) return image;

  const auto ty = ResizeTaps::make(image.height, out_height);
  const auto tx = ResizeTaps::make(image.width, out_width);
  Image out(image.channels, out_height, out_width);
  for (int c = 0; c < image.channels; ++c) {
    for (int i = 0; i < out_height; ++i) {
      const auto iy = static_cast<size_t>(i);
      const double fy = ty.frac[iy];
      for (int j = 0; j < out_width; ++j) {
        const auto jx = static_cast<size_t>(j);
        const double fx = tx.frac[jx];
        const auto y0 = static_cast<int>(ty.lo[iy]), y1 = static_cast<int>(ty.hi[iy]);
        const auto x0 = static_cast<int>(tx.lo[jx]), x1 = static_cast<int>(tx.hi[jx]);
        const double top = (1.0 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1);
        const double bot = (1.0 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1);
        out.at(c, i, j) = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

Image crop(const Image& image, int top, int left, int height, int width) {
  require(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= image.height &&
              left + width <= image.width,
          ErrorCode::Argument, "crop: window outside image");
  Image out(image.channels, height, width);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(&image.data[(static_cast<size_t>(c) * image.height + top + y) * image.width + left],
                  width, &out.at(c, y, 0));
  return out;
}

void paste(Image& dst, const Image& src, int top, int left) {
  require(dst.channels == src.channels, ErrorCode::Argument, "paste: channel mismatch");
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y) {
      const int dy = top + y;
      if (dy < 0 || dy >= dst.height) continue;
      for (int x = 0; x < src.width; ++x) {
        const int dx = left + x;
        if (dx >= 0 && dx < dst.width) dst.at(c, dy, dx) = src.at(c, y, x);
      }
    }
}

Image flip_horizontal(const Image& image) {
  Image out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, image.width - 1 - x) = image.at(c, y, x);
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::Io, "cannot open image '" + path.string() + "'");

  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(ErrorCode::Io, "not a PNG file: '" + path.string() + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Internal, "libpng initialisation failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, "corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image out(3, static_cast<int>(height), static_cast<int>(width));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = rows[static_cast<size_t>(y)][x * 3 + c];
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  require(image.channels == 3 || image.channels == 1, ErrorCode::Argument,
          "write_png: expected 1 or 3 channels");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::Io, "cannot write image '" + path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Internal, "libpng initialisation failed");
  }
  const int ch = image.channels;
  std::vector<png_byte> buffer(static_cast<size_t>(image.height) * image.width * ch);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < ch; ++c) {
        const float v = std::clamp(std::round(image.at(c, y, x)), 0.0f, 255.0f);
        buffer[(static_cast<size_t>(y) * image.width + x) * ch + c] = static_cast<png_byte>(v);
      }
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<size_t>(y)] = buffer.data() + static_cast<size_t>(y) * image.width * ch;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace crowdcount
