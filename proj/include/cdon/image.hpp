#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdon/tensor.hpp"

namespace cdon {

/// 8-bit interleaved RGB raster.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t* p = at(y, x);
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  bool operator==(const Image8&) const = default;
};

/// (1, 3, h, w) with values / 255.
Tensor4 to_tensor(const Image8& image);

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image8& image);
/// Throws FormatError on anything but a P6 / 255 file.
Image8 read_ppm(const std::string& path);

}  // namespace cdon
