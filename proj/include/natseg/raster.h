#ifndef NATSEG_RASTER_H_
#define NATSEG_RASTER_H_

#include <cstdint>
#include <string>
#include <vector>

namespace natseg {

// Interleaved 8-bit raster.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// PNG via libpng. Errors throw IoError with the path in the message.
Raster read_png(const std::string& path);
void write_png(const std::string& path, const Raster& raster);

}  // namespace natseg

#endif  // NATSEG_RASTER_H_
