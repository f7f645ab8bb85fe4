#include "natseg/raster.h"

#include <png.h>

#include <cstring>

#include "natseg/common.h"

namespace natseg {

Raster read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode '" + path + "': " + image.message);
  }
  // Keep the stored channel layout, but always 8-bit samples.
  image.format &= ~(PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP);
  Raster r;
  r.width = static_cast<int>(image.width);
  r.height = static_cast<int>(image.height);
  r.channels = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(image.format));
  r.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode '" + path + "': " + msg);
  }
  return r;
}

void write_png(const std::string& path, const Raster& raster) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  switch (raster.channels) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 2: image.format = PNG_FORMAT_GA; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default: throw IoError("write_png: unsupported channel count " + std::to_string(raster.channels));
  }
  if (raster.pixels.size() != PNG_IMAGE_SIZE(image)) {
    throw IoError("write_png: pixel buffer size does not match " + std::to_string(raster.width) +
                  "x" + std::to_string(raster.height));
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write '" + path + "': " + image.message);
  }
}

}  // namespace natseg
