#include "csenn/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "csenn/common.hpp"

namespace csenn {

namespace {

std::uint8_t to_level(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

void write_png(const std::string& path, int height, int width, const std::vector<float>& values,
               int channels) {
  if (values.size() != static_cast<std::size_t>(height) * width * channels)
    throw ShapeError("write_png: buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  std::vector<std::uint8_t> bytes(values.size());
  std::transform(values.begin(), values.end(), bytes.begin(), to_level);

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr) == 0)
    throw Error("cannot write PNG '" + path + "': " + image.message);
}

}  // namespace

void write_png_rgb(const std::string& path, int height, int width, const std::vector<float>& hwc) {
  write_png(path, height, width, hwc, 3);
}

void write_png_gray(const std::string& path, int height, int width, const std::vector<float>& values) {
  write_png(path, height, width, values, 1);
}

RgbImage read_png_rgb(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0)
    throw SchemaError("cannot read PNG '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr) == 0)
    throw SchemaError("cannot decode PNG '" + path + "': " + image.message);

  RgbImage out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.pixels.resize(bytes.size());
  std::transform(bytes.begin(), bytes.end(), out.pixels.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return out;
}

}  // namespace csenn
