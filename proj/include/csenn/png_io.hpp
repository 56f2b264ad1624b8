#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csenn {

// 8-bit PNG helpers. Float inputs are clamped to [0, 1] and rounded to the
// nearest of 256 levels; reads return level / 255.
void write_png_rgb(const std::string& path, int height, int width, const std::vector<float>& hwc);
void write_png_gray(const std::string& path, int height, int width, const std::vector<float>& values);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // H x W x 3
};

RgbImage read_png_rgb(const std::string& path);

}  // namespace csenn
