#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csenn/common.hpp"

namespace csenn {

enum class Variant { Vanilla, Cbm, MSenn, ScSenn, CSenn };

Variant parse_variant(std::string_view name);
std::string to_string(Variant v);

// Variants predicting through f = theta^T c.
bool is_senn(Variant v);
// Variants trained with the masked view (SCL, and BT for C-SENN).
bool is_contrastive(Variant v);

enum class HeadKind {
  Mlp,       // global-average-pool -> hidden ReLU layer -> outputs
  Linear,    // affine map of the flattened feature
  Constant,  // learned tensor independent of the input
};

HeadKind parse_head_kind(std::string_view name);
std::string to_string(HeadKind kind);

struct ModelConfig {
  Variant variant = Variant::CSenn;
  int height = 64;
  int width = 64;
  // Appends normalized x/y coordinate planes to the RGB input.
  bool coord_channels = true;
  // Maps pixel values from [0,1] to [-1,1] before the first convolution.
  bool center_inputs = true;
  std::vector<std::int64_t> backbone_channels{16, 32, 32};
  bool backbone_bias = true;
  std::int64_t hidden = 128;
  std::int64_t num_concepts = 21;
  std::int64_t num_actions = kNumActions;
  // Width of the supervised bottleneck of the CBM baseline.
  std::int64_t num_concept_labels = 8;
  std::int64_t disc_hidden = 128;
  HeadKind concept_head = HeadKind::Mlp;
  HeadKind relevance_head = HeadKind::Mlp;
  std::uint64_t seed = 0;

  std::int64_t input_channels() const { return coord_channels ? 5 : 3; }
  std::int64_t feature_channels() const { return backbone_channels.back(); }
  std::int64_t feature_height() const;
  std::int64_t feature_width() const;
  std::int64_t feature_dim() const { return feature_channels() * feature_height() * feature_width(); }
  // Width of the concept layer actually produced by the model (L for CBM).
  std::int64_t concept_width() const;

  void validate() const;
};

// Backbone activation h(x), batched: B x C x H' x W'.
struct SpatialFeature {
  torch::Tensor map;

  torch::Tensor flat() const { return map.flatten(1); }
  std::int64_t batch() const { return map.size(0); }
};

// c(x), batched: B x D_c.
struct ConceptVector {
  torch::Tensor values;
};

// theta(x), batched: B x D_c x k.
struct RelevanceTensor {
  torch::Tensor weights;
};

// z = [c; h_flat], batched: B x (D_c + D_h).
struct JointCode {
  torch::Tensor z;
};

JointCode make_joint_code(const ConceptVector& concepts, const SpatialFeature& feature);

// logits[b, j] = sum_i theta[b, i, j] * c[b, i].
torch::Tensor aggregate(const RelevanceTensor& theta, const ConceptVector& concepts);

struct ForwardOutput {
  torch::Tensor logits;                      // B x k
  std::optional<ConceptVector> concepts;     // absent for vanilla
  std::optional<RelevanceTensor> relevance;  // SENN variants only
  SpatialFeature feature;
};

// Stacks samples into a B x 3 x H x W float tensor. Throws ShapeError when a
// sample does not have the requested size.
torch::Tensor stack_images(std::span<const ImageSample> samples, int height, int width);
torch::Tensor stack_images(std::span<const ImageSample* const> samples, int height, int width);
torch::Tensor stack_action_labels(std::span<const ImageSample> samples);
torch::Tensor stack_concept_labels(std::span<const ImageSample> samples);

class ConceptNetImpl : public torch::nn::Module {
 public:
  explicit ConceptNetImpl(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }

  SpatialFeature encode_intermediate(const torch::Tensor& images);
  SpatialFeature encode_intermediate(const ImageSample& sample);
  ConceptVector encode_concepts(const SpatialFeature& feature);
  RelevanceTensor relevance(const SpatialFeature& feature);
  // d(z) in (0, 1), shape B.
  torch::Tensor discriminate(const JointCode& code);

  ForwardOutput forward_features(const SpatialFeature& feature);
  ForwardOutput forward(const torch::Tensor& images);

  torch::nn::Sequential& backbone() { return backbone_; }
  torch::nn::Sequential& concept_head() { return concept_head_; }
  torch::nn::Sequential& relevance_head() { return relevance_head_; }
  torch::nn::Sequential& discriminator() { return discriminator_; }
  torch::nn::Linear& vanilla_head() { return vanilla_head_; }
  torch::nn::Linear& cbm_head() { return cbm_head_; }
  // Only populated for HeadKind::Constant relevance.
  torch::Tensor& constant_relevance() { return constant_relevance_; }

  // Parameters grouped by role; empty groups are omitted.
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> parameter_groups();

 private:
  torch::Tensor prepare_input(const torch::Tensor& images) const;
  torch::Tensor head_input(HeadKind kind, const SpatialFeature& feature) const;

  ModelConfig config_;
  torch::nn::Sequential backbone_{nullptr};
  torch::nn::Sequential concept_head_{nullptr};
  torch::nn::Sequential relevance_head_{nullptr};
  torch::nn::Sequential discriminator_{nullptr};
  torch::nn::Linear vanilla_head_{nullptr};
  torch::nn::Linear cbm_head_{nullptr};
  torch::Tensor constant_relevance_;
};

TORCH_MODULE(ConceptNet);

// Deep copy, including parameter values.
ConceptNet clone_model(ConceptNet& model);

// Single archive of named float32 arrays plus a JSON manifest holding the
// model configuration.
void save_checkpoint(ConceptNet& model, const std::string& path);
ConceptNet load_checkpoint(const std::string& path);
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace csenn
