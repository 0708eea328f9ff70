#pragma once

#include <string>
#include <vector>

#include "svr/common.hpp"

namespace svr {

// Row-major float image, values in [0,1] for color.
struct ImageF {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int w, int h, int c)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// 8-bit RGB PNG. Values clamped to [0,1] on write.
void write_png(const std::string& path, const ImageF& img);
ImageF read_png(const std::string& path);

// Portable float map, little-endian; 1 channel ("Pf") or 3 ("PF").
void write_pfm(const std::string& path, const ImageF& img);
ImageF read_pfm(const std::string& path);

}  // namespace svr
