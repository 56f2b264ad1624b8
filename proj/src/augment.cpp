#include "csenn/augment.hpp"

#include <algorithm>
#include <random>

namespace csenn {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void MaskConfig::validate() const {
  if (epsilon_px < 0) throw ConfigError("mask epsilon must be >= 0");
}

std::size_t PixelMask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

PixelMask preserved_mask(const std::vector<BoundingBox>& boxes, int epsilon_px, int height, int width) {
  PixelMask mask{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
  for (const auto& box : boxes) {
    const int x0 = std::max(0, box.x_min - epsilon_px);
    const int y0 = std::max(0, box.y_min - epsilon_px);
    const int x1 = std::min(width, box.x_max + epsilon_px);
    const int y1 = std::min(height, box.y_max + epsilon_px);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) mask.cells[static_cast<std::size_t>(y) * width + x] = 1;
  }
  return mask;
}

std::uint64_t noise_stream_seed(std::uint64_t seed, const std::string& sample_id) {
  return splitmix64(seed ^ splitmix64(fnv1a(sample_id)));
}

bool is_masked_id(const std::string& sample_id) {
  const std::string suffix = kMaskSuffix;
  return sample_id.size() >= suffix.size() &&
         sample_id.compare(sample_id.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ImageSample mask_image(const ImageSample& sample, const MaskConfig& cfg) {
  cfg.validate();
  const auto keep = preserved_mask(sample.boxes, cfg.epsilon_px, sample.height, sample.width);
  ImageSample out = sample;
  out.sample_id = sample.sample_id + kMaskSuffix;

  std::mt19937_64 rng(noise_stream_seed(cfg.seed, sample.sample_id));
  std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
  for (int y = 0; y < sample.height; ++y)
    for (int x = 0; x < sample.width; ++x) {
      if (keep.at(y, x)) continue;
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = uniform(rng);
    }
  return out;
}

}  // namespace csenn
