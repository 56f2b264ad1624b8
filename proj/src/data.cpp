#include "csenn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "csenn/png_io.hpp"
#include "json.hpp"

namespace csenn {

namespace fs = std::filesystem;
using nlohmann::json;

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

std::vector<ImageSample> DatasetManifest::samples() const {
  std::vector<ImageSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.sample);
  return out;
}

void validate_sample(const ImageSample& s, std::optional<std::size_t> expected_actions) {
  if (s.height < 1 || s.width < 1) throw SchemaError("sample '" + s.sample_id + "' has an empty image");
  if (s.pixels.size() != static_cast<std::size_t>(s.height) * s.width * 3)
    throw SchemaError("sample '" + s.sample_id + "' pixel buffer does not match its size");
  for (float v : s.pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw SchemaError("sample '" + s.sample_id + "' has pixels outside [0, 1]");
  if (expected_actions && s.action_labels.size() != *expected_actions)
    throw SchemaError("sample '" + s.sample_id + "' has " + std::to_string(s.action_labels.size()) +
                      " action labels, expected " + std::to_string(*expected_actions));
  for (auto a : s.action_labels)
    if (a > 1) throw SchemaError("sample '" + s.sample_id + "' has a non-binary action label");
  if (s.concept_labels)
    for (auto c : *s.concept_labels)
      if (c > 1) throw SchemaError("sample '" + s.sample_id + "' has a non-binary concept label");
  for (const auto& b : s.boxes)
    if (!b.valid_within(s.width, s.height))
      throw SchemaError("sample '" + s.sample_id + "' has a box outside the image or with zero extent");
}

void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& s = m.entries[i].sample;
    auto where = [&] { return "manifest entry " + std::to_string(i) + " ('" + s.sample_id + "')"; };
    if (s.action_labels.size() != static_cast<std::size_t>(m.num_actions))
      throw SchemaError(where() + ": action vector has length " + std::to_string(s.action_labels.size()) +
                        ", expected k = " + std::to_string(m.num_actions));
    if (m.num_concept_labels > 0) {
      if (!s.concept_labels || s.concept_labels->size() != static_cast<std::size_t>(m.num_concept_labels))
        throw SchemaError(where() + ": expected " + std::to_string(m.num_concept_labels) + " concept labels");
    } else if (s.concept_labels) {
      throw SchemaError(where() + ": concept labels present but the header declares L = 0");
    }
    if (s.height != m.height || s.width != m.width)
      throw SchemaError(where() + ": image is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                        ", header declares " + std::to_string(m.height) + "x" + std::to_string(m.width));
    try {
      validate_sample(s);
    } catch (const SchemaError& e) {
      throw SchemaError(where() + ": " + e.what());
    }
    if (!ids.insert(s.sample_id).second) throw SchemaError(where() + ": duplicate sample id");
  }
}

std::string write_manifest(const DatasetManifest& m, const std::string& dir, const std::string& filename) {
  validate_manifest(m);
  fs::create_directories(dir);
  const fs::path manifest_path = fs::path(dir) / filename;
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write manifest '" + manifest_path.string() + "'");

  json header = {{"schema", "csenn.manifest"}, {"version", kManifestSchemaVersion},
                 {"split", to_string(m.split)}, {"k", m.num_actions},
                 {"L", m.num_concept_labels},   {"height", m.height},
                 {"width", m.width}};
  out << header.dump() << '\n';
  for (const auto& e : m.entries) {
    const auto& s = e.sample;
    const fs::path image_path = fs::path(dir) / e.image_file;
    fs::create_directories(image_path.parent_path());
    write_png_rgb(image_path.string(), s.height, s.width, s.pixels);

    json boxes = json::array();
    for (const auto& b : s.boxes)
      boxes.push_back({{"x_min", b.x_min}, {"y_min", b.y_min}, {"x_max", b.x_max}, {"y_max", b.y_max},
                       {"class", b.class_name}});
    json entry = {{"sample_id", s.sample_id}, {"image", e.image_file}, {"actions", s.action_labels},
                  {"boxes", boxes}};
    if (s.concept_labels) entry["concepts"] = *s.concept_labels;
    out << entry.dump() << '\n';
  }
  return manifest_path.string();
}

namespace {

std::vector<std::uint8_t> read_bits(const json& j, const std::string& where, const char* field) {
  if (!j.is_array()) throw SchemaError(where + ": '" + field + "' must be an array");
  std::vector<std::uint8_t> bits;
  for (const auto& v : j) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
      throw SchemaError(where + ": '" + field + "' entries must be 0 or 1");
    bits.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  return bits;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("manifest '" + path + "' does not exist or cannot be opened");

  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError("manifest line " + std::to_string(line_no) + " is not valid JSON");
    }
    if (!have_header) {
      try {
        if (j.at("schema").get<std::string>() != "csenn.manifest")
          throw SchemaError("manifest header has an unknown schema");
        const int version = j.at("version").get<int>();
        if (version != kManifestSchemaVersion)
          throw SchemaError("unsupported manifest schema version " + std::to_string(version));
        m.split = parse_split(j.at("split").get<std::string>());
        m.num_actions = j.at("k").get<int>();
        m.num_concept_labels = j.value("L", 0);
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
      } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest header: ") + e.what());
      }
      have_header = true;
      continue;
    }

    const std::string where = "manifest entry " + std::to_string(m.entries.size());
    ManifestEntry entry;
    auto& s = entry.sample;
    try {
      s.sample_id = j.at("sample_id").get<std::string>();
      entry.image_file = j.at("image").get<std::string>();
      s.action_labels = read_bits(j.at("actions"), where, "actions");
      if (j.contains("concepts")) s.concept_labels = read_bits(j.at("concepts"), where, "concepts");
      for (const auto& b : j.value("boxes", json::array()))
        s.boxes.push_back({b.at("x_min").get<int>(), b.at("y_min").get<int>(), b.at("x_max").get<int>(),
                           b.at("y_max").get<int>(), b.value("class", std::string())});
    } catch (const json::exception& e) {
      throw SchemaError(where + ": " + e.what());
    }
    if (s.action_labels.size() != static_cast<std::size_t>(m.num_actions))
      throw SchemaError(where + " ('" + s.sample_id + "'): action vector has length " +
                        std::to_string(s.action_labels.size()) + ", expected k = " + std::to_string(m.num_actions));
    const fs::path image_path = fs::path(m.root) / entry.image_file;
    if (!fs::exists(image_path))
      throw SchemaError(where + " ('" + s.sample_id + "'): missing image file '" + image_path.string() + "'");
    auto image = read_png_rgb(image_path.string());
    s.height = image.height;
    s.width = image.width;
    s.pixels = std::move(image.pixels);
    m.entries.push_back(std::move(entry));
  }
  if (!have_header) throw SchemaError("manifest '" + path + "' is empty");
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------

namespace synthetic {

namespace {

struct Rgb {
  float r, g, b;
};

void fill_pixel(std::vector<float>& img, int width, int y, int x, Rgb c) {
  auto* p = &img[(static_cast<std::size_t>(y) * width + x) * 3];
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

// Dark triangle inside a sign box, pointing right (or left when mirrored).
bool in_arrow(double u, double v, bool points_right) {
  if (!points_right) u = 1.0 - u;
  if (u < 0.2 || u > 0.85) return false;
  return std::abs(v - 0.5) <= 0.32 * (0.85 - u) / 0.65;
}

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

bool intersects_center_third(const BoundingBox& b, int width) {
  return 3 * b.x_max > width && 3 * b.x_min < 2 * width;
}
bool intersects_right_third(const BoundingBox& b, int width) { return 3 * b.x_max > 2 * width; }
bool intersects_left_third(const BoundingBox& b, int width) { return 3 * b.x_min < width; }

}  // namespace

SceneLabels derive_labels(const std::vector<BoundingBox>& boxes, int width) {
  bool red = false, green = false, obs_center = false, obs_right = false, obs_left = false;
  bool sign_right = false, sign_left = false;
  for (const auto& b : boxes) {
    if (b.class_name == kSignalRed) red = true;
    if (b.class_name == kSignalGreen) green = true;
    if (b.class_name == kSignRight) sign_right = true;
    if (b.class_name == kSignLeft) sign_left = true;
    if (b.class_name == kObstacle) {
      obs_center = obs_center || intersects_center_third(b, width);
      obs_right = obs_right || intersects_right_third(b, width);
      obs_left = obs_left || intersects_left_third(b, width);
    }
  }
  const bool stop = red || obs_center;
  const bool forward = green && !stop;
  const bool right = sign_right && !obs_right;
  const bool left = sign_left && !obs_left;
  auto bit = [](bool v) { return static_cast<std::uint8_t>(v ? 1 : 0); };
  SceneLabels labels;
  labels.actions = {bit(forward), bit(stop), bit(right), bit(left)};
  labels.concepts = {bit(red),        bit(green),     bit(obs_center), bit(obs_right),
                     bit(obs_left),   bit(sign_right), bit(sign_left),  bit(!boxes.empty())};
  return labels;
}

std::vector<float> render_scene(const std::vector<BoundingBox>& boxes, int height, int width,
                                std::uint64_t texture_seed) {
  std::vector<float> img(static_cast<std::size_t>(height) * width * 3);
  std::mt19937_64 rng(texture_seed);
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
  const Rgb sky{0.55f, 0.70f, 0.85f};
  const Rgb road{0.35f, 0.35f, 0.37f};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Rgb base = y < height / 2 ? sky : road;
      const float n = jitter(rng);
      fill_pixel(img, width, y, x, {base.r + n, base.g + n, base.b + n});
    }

  for (const auto& b : boxes) {
    const double w = b.width();
    const double h = b.height();
    for (int y = b.y_min; y < b.y_max; ++y)
      for (int x = b.x_min; x < b.x_max; ++x) {
        const double u = (x - b.x_min + 0.5) / w;
        const double v = (y - b.y_min + 0.5) / h;
        Rgb c{0, 0, 0};
        if (b.class_name == kSignalRed || b.class_name == kSignalGreen) {
          const double r2 = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5);
          const bool lamp = r2 <= 0.36 * 0.36;
          if (!lamp)
            c = {0.12f, 0.12f, 0.12f};
          else if (b.class_name == kSignalRed)
            c = {0.92f, 0.12f, 0.10f};
          else
            c = {0.10f, 0.85f, 0.25f};
        } else if (b.class_name == kObstacle) {
          const bool edge = x == b.x_min || x == b.x_max - 1 || y == b.y_min || y == b.y_max - 1;
          c = edge ? Rgb{0.08f, 0.10f, 0.30f} : Rgb{0.20f, 0.25f, 0.65f};
        } else if (b.class_name == kSignRight) {
          c = in_arrow(u, v, true) ? Rgb{0.10f, 0.08f, 0.05f} : Rgb{0.98f, 0.60f, 0.05f};
        } else if (b.class_name == kSignLeft) {
          c = in_arrow(u, v, false) ? Rgb{0.10f, 0.08f, 0.05f} : Rgb{0.60f, 0.25f, 0.85f};
        } else {
          c = {1.0f, 1.0f, 1.0f};
        }
        fill_pixel(img, width, y, x, c);
      }
  }
  for (auto& v : img) v = quantize(v);
  return img;
}

}  // namespace synthetic

namespace {

struct ObjectShape {
  const char* kind;
  int min_w, max_w, min_h, max_h;
  bool square;
};

bool overlaps_with_gap(const BoundingBox& a, const BoundingBox& b) {
  return a.x_min - 1 < b.x_max && b.x_min - 1 < a.x_max && a.y_min - 1 < b.y_max && b.y_min - 1 < a.y_max;
}

DatasetManifest generate_once(std::size_t n, std::uint64_t seed, Split split,
                              const synthetic::SceneOptions& opt) {
  using namespace synthetic;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const ObjectShape signal_red{kSignalRed, 7, 12, 7, 12, true};
  const ObjectShape signal_green{kSignalGreen, 7, 12, 7, 12, true};
  const ObjectShape obstacle{kObstacle, 8, 18, 6, 12, false};
  const ObjectShape sign_right{kSignRight, 8, 12, 8, 12, true};
  const ObjectShape sign_left{kSignLeft, 8, 12, 8, 12, true};

  DatasetManifest m;
  m.split = split;
  m.num_actions = kNumActions;
  m.num_concept_labels = kNumConcepts;
  m.height = opt.height;
  m.width = opt.width;
  m.entries.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<const ObjectShape*> wanted;
    if (unit(rng) < opt.p_red) wanted.push_back(&signal_red);
    if (unit(rng) < opt.p_green) wanted.push_back(&signal_green);
    const double r = unit(rng);
    const int obstacles = r < opt.p_obstacles[0] ? 0 : (r < opt.p_obstacles[0] + opt.p_obstacles[1] ? 1 : 2);
    for (int o = 0; o < obstacles; ++o) wanted.push_back(&obstacle);
    if (unit(rng) < opt.p_sign_right) wanted.push_back(&sign_right);
    if (unit(rng) < opt.p_sign_left) wanted.push_back(&sign_left);

    std::vector<BoundingBox> boxes;
    for (const auto* shape : wanted) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const int w = uniform_int(shape->min_w, shape->max_w);
        const int h = shape->square ? w : uniform_int(shape->min_h, shape->max_h);
        const int x = uniform_int(0, opt.width - w);
        const int y = uniform_int(0, opt.height - h);
        BoundingBox candidate{x, y, x + w, y + h, shape->kind};
        const bool clash = std::any_of(boxes.begin(), boxes.end(),
                                       [&](const BoundingBox& b) { return overlaps_with_gap(candidate, b); });
        if (!clash) {
          boxes.push_back(candidate);
          break;
        }
      }
    }

    ManifestEntry entry;
    auto& s = entry.sample;
    char id[64];
    std::snprintf(id, sizeof(id), "s%llu_%06zu", static_cast<unsigned long long>(seed), i);
    s.sample_id = id;
    entry.image_file = "images/" + s.sample_id + ".png";
    s.height = opt.height;
    s.width = opt.width;
    s.pixels = render_scene(boxes, opt.height, opt.width, rng());
    const auto labels = derive_labels(boxes, opt.width);
    s.action_labels = labels.actions;
    s.concept_labels = labels.concepts;
    s.boxes = std::move(boxes);
    m.entries.push_back(std::move(entry));
  }
  return m;
}

bool covers_all_actions(const DatasetManifest& m) {
  for (int j = 0; j < m.num_actions; ++j) {
    bool seen0 = false, seen1 = false;
    for (const auto& e : m.entries) (e.sample.action_labels[j] ? seen1 : seen0) = true;
    if (!seen0 || !seen1) return false;
  }
  return true;
}

}  // namespace

DatasetManifest generate_synthetic(std::size_t n, std::uint64_t seed, Split split,
                                   const synthetic::SceneOptions& options) {
  if (n < 1) throw ConfigError("generate_synthetic: n must be >= 1");
  if (options.height < 24 || options.width < 24) throw ConfigError("synthetic scenes need at least 24x24 pixels");
  for (int attempt = 0; attempt <= options.max_coverage_retries; ++attempt) {
    auto m = generate_once(n, seed + static_cast<std::uint64_t>(attempt), split, options);
    if (n < 200 || covers_all_actions(m)) return m;
  }
  throw Error("generate_synthetic: could not reach full action coverage within the retry budget");
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const DatasetManifest& manifest, BatchOptions options)
    : manifest_(manifest), options_(std::move(options)) {
  if (options_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (options_.contrastive && options_.batch_size < 2)
    throw ConfigError("batch_size must be >= 2 when contrastive losses are active");
  if (options_.with_mask) options_.mask.validate();
  order_.resize(manifest_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(options_.seed);
  std::shuffle(order_.begin(), order_.end(), rng);

  for (std::size_t start = 0; start < order_.size(); start += options_.batch_size) bounds_.push_back(start);
  bounds_.push_back(order_.size());
  if (bounds_.size() > 2 && bounds_[bounds_.size() - 1] - bounds_[bounds_.size() - 2] < options_.min_tail)
    bounds_.erase(bounds_.end() - 2);
}

std::size_t BatchStream::num_batches() const { return bounds_.size() - 1; }

std::optional<Batch> BatchStream::next() {
  if (cursor_ + 1 >= bounds_.size()) return std::nullopt;
  const std::size_t begin = bounds_[cursor_];
  const std::size_t end = bounds_[cursor_ + 1];
  Batch batch;
  batch.samples.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& s = manifest_.entries[order_[i]].sample;
    batch.samples.push_back(s);
    if (options_.with_mask) {
      if (s.boxes.empty()) ++empty_box_masks_;
      batch.masked.push_back(mask_image(s, options_.mask));
    }
  }
  ++cursor_;
  return batch;
}

}  // namespace csenn
