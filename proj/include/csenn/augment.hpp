#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csenn/common.hpp"

namespace csenn {

enum class NoiseKind { Uniform01 };

struct MaskConfig {
  int epsilon_px = 10;
  NoiseKind noise_kind = NoiseKind::Uniform01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Row-major H x W membership grid.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  bool at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

// Union of the boxes dilated by epsilon_px on every side, clipped to the image.
PixelMask preserved_mask(const std::vector<BoundingBox>& boxes, int epsilon_px, int height, int width);

// Keeps pixels inside the dilated boxes bit-for-bit and replaces all others
// with i.i.d. noise drawn from a stream keyed by (cfg.seed, sample_id).
// Labels and boxes carry over; the id gains the "#mask" suffix.
ImageSample mask_image(const ImageSample& sample, const MaskConfig& cfg);

inline constexpr const char* kMaskSuffix = "#mask";
bool is_masked_id(const std::string& sample_id);

// Stable 64-bit seed for the per-sample noise stream.
std::uint64_t noise_stream_seed(std::uint64_t seed, const std::string& sample_id);

}  // namespace csenn
