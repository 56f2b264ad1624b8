#include "csenn/evaluation.hpp"

#include "csenn/augment.hpp"

namespace csenn {

ModelOutputs predict(ConceptNet& model, const DatasetManifest& data, std::size_t batch_size) {
  torch::NoGradGuard no_grad;
  const auto& cfg = model->config();
  const auto dtype = model->parameters().front().scalar_type();
  std::vector<torch::Tensor> logits, concepts;
  ModelOutputs out;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const ImageSample*> chunk;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = data.entries[i].sample;
      if (is_masked_id(s.sample_id))
        throw ConfigError("masked sample '" + s.sample_id + "' reached the inference path");
      chunk.push_back(&s);
      out.sample_ids.push_back(s.sample_id);
    }
    auto fwd = model->forward(stack_images(chunk, cfg.height, cfg.width).to(dtype));
    logits.push_back(fwd.logits);
    if (fwd.concepts) concepts.push_back(fwd.concepts->values);
  }
  auto samples = data.samples();
  out.logits = logits.empty() ? torch::empty({0, cfg.num_actions}) : torch::cat(logits, 0);
  if (!concepts.empty()) out.concepts = torch::cat(concepts, 0);
  out.action_labels = stack_action_labels(samples);
  if (data.num_concept_labels > 0) out.concept_labels = stack_concept_labels(samples);
  return out;
}

EvalResult evaluate(ConceptNet& model, const DatasetManifest& data, double threshold) {
  auto outputs = predict(model, data);
  return f1_scores(outputs.logits, outputs.action_labels, threshold);
}

}  // namespace csenn
