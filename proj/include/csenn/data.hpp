#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "csenn/augment.hpp"
#include "csenn/common.hpp"

namespace csenn {

enum class Split { Train, Val, Test };

Split parse_split(std::string_view name);
std::string to_string(Split split);

inline constexpr int kManifestSchemaVersion = 1;

struct ManifestEntry {
  std::string image_file;  // relative to the manifest root
  ImageSample sample;
};

struct DatasetManifest {
  std::string root;
  Split split = Split::Train;
  int num_actions = kNumActions;
  int num_concept_labels = 0;  // 0 when entries carry no concept labels
  int height = 64;
  int width = 64;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::vector<ImageSample> samples() const;
};

// Throws SchemaError naming the first offending entry.
void validate_manifest(const DatasetManifest& manifest);

// Writes manifest.jsonl plus one PNG per entry under `dir`; returns the
// manifest path. The first line is a header carrying the schema version.
std::string write_manifest(const DatasetManifest& manifest, const std::string& dir,
                           const std::string& filename = "manifest.jsonl");
// Reads, validates and loads every referenced image.
DatasetManifest load_manifest(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace synthetic {

inline constexpr const char* kSignalRed = "signal_red";
inline constexpr const char* kSignalGreen = "signal_green";
inline constexpr const char* kObstacle = "obstacle";
inline constexpr const char* kSignRight = "sign_right";
inline constexpr const char* kSignLeft = "sign_left";

inline constexpr int kNumConcepts = 8;
inline constexpr const char* kConceptNames[kNumConcepts] = {
    "red", "green", "obstacle_center", "obstacle_right", "obstacle_left", "sign_right", "sign_left", "any_object"};

struct SceneOptions {
  int height = 64;
  int width = 64;
  double p_red = 0.3;
  double p_green = 0.5;
  double p_sign_right = 0.4;
  double p_sign_left = 0.4;
  // Probabilities of 0, 1 and 2 obstacles.
  double p_obstacles[3] = {0.4, 0.4, 0.2};
  int max_coverage_retries = 10;
};

struct SceneLabels {
  std::vector<std::uint8_t> actions;   // F, S, R, L
  std::vector<std::uint8_t> concepts;  // kConceptNames order
};

// Applies the scene rules to the object boxes of one image.
SceneLabels derive_labels(const std::vector<BoundingBox>& boxes, int width);

// Renders one scene from its object boxes.
std::vector<float> render_scene(const std::vector<BoundingBox>& boxes, int height, int width,
                                std::uint64_t texture_seed);

}  // namespace synthetic

// n synthetic scenes with tight boxes and rule-derived labels. For n >= 200
// every action bit is guaranteed to take both values (the seed is bumped a
// bounded number of times otherwise).
DatasetManifest generate_synthetic(std::size_t n, std::uint64_t seed, Split split = Split::Train,
                                   const synthetic::SceneOptions& options = {});

// ---------------------------------------------------------------------------
// Batching

struct BatchOptions {
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool with_mask = false;
  MaskConfig mask;
  // Contrastive objectives need at least two samples per batch.
  bool contrastive = false;
  // A trailing batch smaller than this is merged into the previous one.
  std::size_t min_tail = 1;
};

struct Batch {
  std::vector<ImageSample> samples;
  std::vector<ImageSample> masked;  // empty unless with_mask
};

// One shuffled pass over the manifest. The order depends only on the seed.
class BatchStream {
 public:
  BatchStream(const DatasetManifest& manifest, BatchOptions options);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  // Masked samples produced so far whose box list was empty (all noise).
  std::size_t empty_box_masks() const { return empty_box_masks_; }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const DatasetManifest& manifest_;
  BatchOptions options_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> bounds_;  // batch b covers [bounds_[b], bounds_[b + 1])
  std::size_t cursor_ = 0;
  std::size_t empty_box_masks_ = 0;
};

}  // namespace csenn
