#include "csenn/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "csenn/png_io.hpp"

namespace csenn {

namespace fs = std::filesystem;

float SaliencyMap::max() const { return values.empty() ? 0.0f : *std::max_element(values.begin(), values.end()); }

double SaliencyMap::mean() const {
  double sum = 0.0;
  for (float v : values) sum += v;
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

namespace {

std::string csv_number(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

std::string matrix_csv(const std::vector<std::string>& row_names, const std::vector<std::string>& col_names,
                       const std::function<double(std::size_t, std::size_t)>& at) {
  std::ostringstream out;
  out << "name";
  for (const auto& c : col_names) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < row_names.size(); ++i) {
    out << row_names[i];
    for (std::size_t j = 0; j < col_names.size(); ++j) out << ',' << csv_number(at(i, j));
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> concept_names(std::int64_t n) {
  std::vector<std::string> names;
  for (std::int64_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
  return names;
}

// Centered, unit-norm columns; throws on zero variance.
torch::Tensor standardize_columns(const torch::Tensor& x, const char* what) {
  auto centered = x.to(torch::kDouble) - x.to(torch::kDouble).mean(0, true);
  auto norms = centered.norm(2, 0);
  auto small = (norms < 1e-12).nonzero();
  if (small.size(0) > 0)
    throw DegenerateColumnError(std::string(what) + " has zero variance", small[0][0].item<std::int64_t>());
  return centered / norms;
}

CorrelationMatrix to_matrix(const torch::Tensor& r, std::vector<std::string> rows, std::vector<std::string> cols) {
  CorrelationMatrix m;
  m.rows = r.size(0);
  m.cols = r.size(1);
  auto c = r.contiguous();
  m.values.assign(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  for (auto& v : m.values) v = std::clamp(v, -1.0, 1.0);
  m.row_names = std::move(rows);
  m.col_names = std::move(cols);
  return m;
}

}  // namespace

std::string CorrelationMatrix::csv() const {
  return matrix_csv(row_names, col_names, [&](std::size_t i, std::size_t j) {
    return at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j));
  });
}

std::string AttentionMatrix::csv() const {
  return matrix_csv(row_names, col_names, [&](std::size_t i, std::size_t j) { return values[i][j]; });
}

torch::Tensor gradcam_channel_weights(ConceptNet& model, const SpatialFeature& feature, std::int64_t concept_index) {
  const auto width = model->config().concept_width();
  if (width == 0) throw ConfigError("grad-CAM needs a model with a concept layer");
  if (concept_index < 0 || concept_index >= width)
    throw ConfigError("concept index " + std::to_string(concept_index) + " out of range [0, " +
                      std::to_string(width) + ")");
  torch::AutoGradMode enable(true);
  SpatialFeature leaf{feature.map.detach().clone().requires_grad_(true)};
  auto c = model->encode_concepts(leaf).values;
  auto grad = torch::autograd::grad({c.select(1, concept_index).sum()}, {leaf.map}, {}, false, false, true)[0];
  if (!grad.defined()) grad = torch::zeros_like(leaf.map);
  return grad.mean({2, 3});
}

SaliencyMap gradcam_from_feature(ConceptNet& model, const SpatialFeature& feature, std::int64_t concept_index,
                                 int height, int width, const std::string& sample_id) {
  if (feature.batch() != 1) throw ShapeError("gradcam_from_feature expects a batch of one");
  auto weights = gradcam_channel_weights(model, feature, concept_index);  // 1 x C
  torch::NoGradGuard no_grad;
  auto cam = torch::relu((weights.unsqueeze(2).unsqueeze(3) * feature.map.detach()).sum(1, true));
  namespace F = torch::nn::functional;
  auto up = F::interpolate(cam, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{height, width})
                                    .mode(torch::kBilinear)
                                    .align_corners(false))
                .squeeze()
                .to(torch::kFloat)
                .contiguous();
  const float peak = up.max().item<float>();
  if (peak > 0.0f) up = up / peak;

  SaliencyMap map;
  map.height = height;
  map.width = width;
  map.values.assign(up.data_ptr<float>(), up.data_ptr<float>() + up.numel());
  for (auto& v : map.values) v = std::clamp(v, 0.0f, 1.0f);
  map.concept_index = concept_index;
  map.sample_id = sample_id;
  return map;
}

SaliencyMap gradcam(ConceptNet& model, const ImageSample& sample, std::int64_t concept_index) {
  SpatialFeature feature;
  {
    torch::NoGradGuard no_grad;
    feature = model->encode_intermediate(sample);
  }
  return gradcam_from_feature(model, feature, concept_index, sample.height, sample.width, sample.sample_id);
}

std::vector<SaliencyMap> gradcam(ConceptNet& model, const std::vector<ImageSample>& samples,
                                 std::int64_t concept_index) {
  std::vector<SaliencyMap> maps;
  maps.reserve(samples.size());
  for (const auto& s : samples) maps.push_back(gradcam(model, s, concept_index));
  return maps;
}

CorrelationMatrix concept_correlation(const torch::Tensor& activations) {
  if (activations.dim() != 2) throw ShapeError("concept_correlation: activations must be N x D_c");
  if (activations.size(0) < 2) throw ShapeError("concept_correlation: need at least two samples");
  auto z = standardize_columns(activations, "concept");
  auto r = z.t().matmul(z);
  r = 0.5 * (r + r.t());
  r.fill_diagonal_(1.0);
  auto names = concept_names(activations.size(1));
  return to_matrix(r, names, names);
}

CorrelationMatrix concept_label_correlation(const torch::Tensor& activations, const torch::Tensor& concept_labels,
                                            const std::vector<std::string>& label_names) {
  if (activations.dim() != 2 || concept_labels.dim() != 2 || activations.size(0) != concept_labels.size(0))
    throw ShapeError("concept_label_correlation: need N x D_c activations and N x L labels");
  if (activations.size(0) < 2) throw ShapeError("concept_label_correlation: need at least two samples");
  auto zc = standardize_columns(activations, "concept");
  auto zl = standardize_columns(concept_labels, "concept label");
  std::vector<std::string> cols = label_names;
  if (cols.empty())
    for (std::int64_t j = 0; j < concept_labels.size(1); ++j) cols.push_back("label" + std::to_string(j));
  if (static_cast<std::int64_t>(cols.size()) != concept_labels.size(1))
    throw ShapeError("concept_label_correlation: one name per label column required");
  return to_matrix(zc.t().matmul(zl), concept_names(activations.size(1)), cols);
}

double mean_abs_offdiag(const CorrelationMatrix& m) {
  if (m.rows != m.cols) throw ShapeError("mean_abs_offdiag: matrix must be square");
  if (m.rows < 2) return 0.0;
  double sum = 0.0;
  for (std::int64_t i = 0; i < m.rows; ++i)
    for (std::int64_t j = 0; j < m.cols; ++j)
      if (i != j) sum += std::abs(m.at(i, j));
  return sum / static_cast<double>(m.rows * (m.rows - 1));
}

AttentionMatrix object_attention(const std::vector<SaliencyMap>& maps, const std::vector<ImageSample>& samples,
                                 const std::vector<std::string>& class_names) {
  if (maps.size() != samples.size()) throw ShapeError("object_attention: one saliency map per sample required");
  AttentionMatrix out;
  out.col_names = class_names;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& map = maps[i];
    if (map.height != s.height || map.width != s.width)
      throw ShapeError("object_attention: saliency map size differs from image '" + s.sample_id + "'");
    std::vector<double> row(class_names.size(), 0.0);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      double box_mean_sum = 0.0;
      int boxes = 0;
      for (const auto& b : s.boxes) {
        if (b.class_name != class_names[c]) continue;
        double sum = 0.0;
        for (int y = b.y_min; y < b.y_max; ++y)
          for (int x = b.x_min; x < b.x_max; ++x) sum += map.at(y, x);
        box_mean_sum += sum / static_cast<double>(b.area());
        ++boxes;
      }
      if (boxes > 0) row[c] = box_mean_sum / boxes;
    }
    out.values.push_back(std::move(row));
    out.row_names.push_back(s.sample_id);
  }
  return out;
}

std::vector<std::string> object_classes(const DatasetManifest& data) {
  std::set<std::string> classes;
  for (const auto& e : data.entries)
    for (const auto& b : e.sample.boxes) classes.insert(b.class_name);
  return {classes.begin(), classes.end()};
}

AttentionMatrix object_attention(ConceptNet& model, const DatasetManifest& data, std::int64_t concept_index) {
  auto samples = data.samples();
  return object_attention(gradcam(model, samples, concept_index), samples, object_classes(data));
}

void export_saliency_png(const SaliencyMap& map, const ImageSample& sample, const std::string& dir) {
  if (map.height != sample.height || map.width != sample.width)
    throw ShapeError("export_saliency_png: map and image sizes differ");
  fs::create_directories(dir);
  const std::string stem = sample.sample_id + "_c" + std::to_string(map.concept_index);
  write_png_gray((fs::path(dir) / (stem + ".png")).string(), map.height, map.width, map.values);

  std::vector<float> overlay(sample.pixels.size());
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const float s = map.at(y, x);
      const float heat[3] = {s, 0.0f, 0.0f};
      for (int ch = 0; ch < 3; ++ch) {
        const auto idx = (static_cast<std::size_t>(y) * map.width + x) * 3 + ch;
        overlay[idx] = 0.5f * sample.pixels[idx] + 0.5f * heat[ch];
      }
    }
  write_png_rgb((fs::path(dir) / (stem + "_overlay.png")).string(), map.height, map.width, overlay);
}

void write_text_file(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

}  // namespace csenn
