#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "csenn/data.hpp"
#include "csenn/metrics.hpp"
#include "csenn/model.hpp"

namespace csenn {

struct ModelOutputs {
  torch::Tensor logits;                  // N x k
  std::optional<torch::Tensor> concepts;  // N x D_c (raw activations)
  torch::Tensor action_labels;           // N x k
  std::optional<torch::Tensor> concept_labels;
  std::vector<std::string> sample_ids;
};

// Inference over unmasked images only; masked ids are rejected.
ModelOutputs predict(ConceptNet& model, const DatasetManifest& data, std::size_t batch_size = 128);
EvalResult evaluate(ConceptNet& model, const DatasetManifest& data, double threshold = 0.5);

}  // namespace csenn
