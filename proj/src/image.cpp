#include "cdon/image.hpp"

#include <fstream>

namespace cdon {

Tensor4 to_tensor(const Image8& image) {
  Tensor4 t({1, 3, image.height, image.width});
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(y, x);
      for (int c = 0; c < 3; ++c) t(0, c, y, x) = static_cast<real>(p[c]) / real(255);
    }
  }
  return t;
}

void write_ppm(const std::string& path, const Image8& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw FormatError("short write to " + path);
}

Image8 read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw FormatError(path + ": not a P6/255 PPM");
  in.get();
  Image8 img(h, w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError(path + ": truncated pixel data");
  }
  return img;
}

}  // namespace cdon
