#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace csenn {

// Base of every error the toolkit throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, malformed manifest, inconsistent flags. The CLI maps
// these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A column (concept, label, ...) whose norm or variance is zero, so a
// cosine/Pearson statistic is undefined.
class DegenerateColumnError : public Error {
 public:
  DegenerateColumnError(const std::string& what, std::int64_t column)
      : Error(what + " (column " + std::to_string(column) + ")"), column_(column) {}
  std::int64_t column() const noexcept { return column_; }

 private:
  std::int64_t column_;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& term)
      : Error("non-finite loss term: " + term), term_(term) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

// Half-open pixel box: columns [x_min, x_max), rows [y_min, y_max).
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  std::string class_name;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  int area() const { return width() * height(); }
  bool contains(int x, int y) const { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
  bool valid_within(int image_width, int image_height) const {
    return x_min < x_max && y_min < y_max && x_min >= 0 && y_min >= 0 && x_max <= image_width &&
           y_max <= image_height;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Row-major H x W x 3 image with values in [0, 1].
struct ImageSample {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> action_labels;
  std::optional<std::vector<std::uint8_t>> concept_labels;
  std::vector<BoundingBox> boxes;
  std::string sample_id;

  float& at(int y, int x, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  float at(int y, int x, int ch) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
  }

  friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

// Throws SchemaError describing the first violated invariant.
void validate_sample(const ImageSample& sample, std::optional<std::size_t> expected_actions = std::nullopt);

inline constexpr int kNumActions = 4;
inline constexpr const char* kActionNames[kNumActions] = {"forward", "stop", "right", "left"};
inline constexpr const char* kActionShortNames[kNumActions] = {"F", "S", "R", "L"};

}  // namespace csenn
