#include "svr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace svr {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

void write_png(const std::string& path, const ImageF& img) {
  if (img.channels != 3) throw IoError("write_png expects 3 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failure writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[3 * x + c] = static_cast<png_byte>(std::lround(
            255.0 * std::clamp(img.at(x, y, c), 0.0f, 1.0f)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageF read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failure reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  ImageF img(w, h, 3);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = row[3 * x + c] / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_pfm(const std::string& path, const ImageF& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_pfm expects 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (img.channels == 1 ? "Pf" : "PF") << '\n'
      << img.width << ' ' << img.height << '\n'
      << "-1.0\n";  // negative: little-endian
  // PFM stores rows bottom-up.
  for (int y = img.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(
                  &img.data[static_cast<std::size_t>(y) * img.width * img.channels]),
              static_cast<std::streamsize>(img.width) * img.channels *
                  sizeof(float));
  if (!out) throw IoError("short write on " + path);
}

ImageF read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  int w, h;
  double scale;
  in >> magic >> w >> h >> scale;
  if ((magic != "Pf" && magic != "PF") || w <= 0 || h <= 0)
    throw IoError("bad PFM header in " + path);
  if (scale >= 0) throw IoError("big-endian PFM not supported: " + path);
  in.get();  // single whitespace after the header
  ImageF img(w, h, magic == "Pf" ? 1 : 3);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(
                &img.data[static_cast<std::size_t>(y) * w * img.channels]),
            static_cast<std::streamsize>(w) * img.channels * sizeof(float));
    if (!in) throw IoError("truncated PFM " + path);
  }
  return img;
}

}  // namespace svr
