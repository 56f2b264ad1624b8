#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "csenn/data.hpp"
#include "csenn/model.hpp"

namespace csenn {

// H x W saliency, non-negative, max-normalized to 1 unless all zero.
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::int64_t concept_index = 0;
  std::string sample_id;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float max() const;
  double mean() const;
};

struct CorrelationMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> values;  // row-major
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;

  double at(std::int64_t i, std::int64_t j) const { return values[static_cast<std::size_t>(i * cols + j)]; }
  std::string csv() const;
};

// Rows are images, columns are detected object classes.
struct AttentionMatrix {
  std::vector<std::vector<double>> values;
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;

  std::string csv() const;
};

// d c_j / d map averaged over spatial positions: B x C. The feature map is
// detached and re-attached as a leaf, so only the concept head is involved.
torch::Tensor gradcam_channel_weights(ConceptNet& model, const SpatialFeature& feature, std::int64_t concept_index);

// grad-CAM on an explicit feature map (batch of one): ReLU of the
// weight-summed channels, bilinearly upsampled to height x width, then
// divided by its maximum.
SaliencyMap gradcam_from_feature(ConceptNet& model, const SpatialFeature& feature, std::int64_t concept_index,
                                 int height, int width, const std::string& sample_id = {});

SaliencyMap gradcam(ConceptNet& model, const ImageSample& sample, std::int64_t concept_index);
std::vector<SaliencyMap> gradcam(ConceptNet& model, const std::vector<ImageSample>& samples,
                                 std::int64_t concept_index);

// Pearson correlation between the columns of activations (N x D_c).
CorrelationMatrix concept_correlation(const torch::Tensor& activations);
// D_c x L Pearson correlation between concepts and concept labels.
CorrelationMatrix concept_label_correlation(const torch::Tensor& activations, const torch::Tensor& concept_labels,
                                            const std::vector<std::string>& label_names = {});

// Mean absolute off-diagonal entry of a square matrix.
double mean_abs_offdiag(const CorrelationMatrix& m);

// Entry (image, class) is the mean, over that class's boxes in the image, of
// the mean saliency inside each box; 0 when the class is absent.
AttentionMatrix object_attention(const std::vector<SaliencyMap>& maps, const std::vector<ImageSample>& samples,
                                 const std::vector<std::string>& class_names);
AttentionMatrix object_attention(ConceptNet& model, const DatasetManifest& data, std::int64_t concept_index);

// Sorted distinct box classes across the manifest.
std::vector<std::string> object_classes(const DatasetManifest& data);

// Writes {dir}/{sample_id}_c{j}.png (grayscale) and {sample_id}_c{j}_overlay.png
// (0.5 blend with the input, saliency drawn in the red channel).
void export_saliency_png(const SaliencyMap& map, const ImageSample& sample, const std::string& dir);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace csenn
