#pragma once

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

#include "csenn/model.hpp"
#include "csenn/positive_sets.hpp"

namespace csenn {

struct LossWeights {
  double alpha = 0.0;              // discriminator term (M-SENN)
  double beta = 0.01;              // theta stability
  double lambda_bt_offdiag = 0.1;  // off-diagonal weight inside the BT loss
  double lambda_scl = 1.0;
  double lambda_bt = 0.001;
  double tau = 0.1;                // SCL temperature

  // Defaults for a variant, with weights of unused terms set to zero.
  static LossWeights for_variant(Variant v);
  void validate() const;
};

enum class SclReduction { Mean, Sum };

// Per-term values of one objective evaluation. Terms the objective does not
// use stay empty.
struct LossBreakdown {
  std::optional<double> classification;
  std::optional<double> discriminator;
  std::optional<double> theta_stability;
  std::optional<double> scl;
  std::optional<double> bt;
  std::optional<double> concept_supervision;  // CBM baseline only
  double total = 0.0;
};

// Term tensors fed to a composite objective.
struct LossTerms {
  std::optional<torch::Tensor> classification;
  std::optional<torch::Tensor> discriminator;
  std::optional<torch::Tensor> theta_stability;
  std::optional<torch::Tensor> scl;
  std::optional<torch::Tensor> bt;
  std::optional<torch::Tensor> concept_supervision;
};

struct Objective {
  torch::Tensor total;  // differentiable
  LossBreakdown breakdown;
};

// Concepts of the original images and of their masked twins, row-aligned.
struct ContrastiveBatch {
  torch::Tensor concepts;         // B x D_c
  torch::Tensor masked_concepts;  // B x D_c
  torch::Tensor labels;           // B x k, entries in {0, 1}

  void validate() const;
};

// Sigmoid binary cross-entropy averaged over all B*k entries.
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Squared-error discriminator loss with targets a = 1 for matched codes and
// b = 0 for mismatched ones, averaged over the batch.
torch::Tensor discriminator_loss(const torch::Tensor& d_joint, const torch::Tensor& d_mismatched);
double discriminator_loss(double d_joint, double d_mismatched);

// Squared Frobenius norm of grad_h f - (theta^T J^c_h)^T per sample, averaged
// over the batch. theta is not differentiated when forming the Jacobian but
// still receives gradients through the product.
// If feature.map is not part of a graph it is treated as a fresh leaf.
torch::Tensor theta_stability_loss(ConceptNet& model, const SpatialFeature& feature);

// Supervised contrastive loss over a pool of embeddings (rows). Every anchor
// is contrasted against all other rows of the pool; positives[i] lists the
// pool rows that are positives of anchors[i]. Rows are L2-normalized first.
torch::Tensor scl_loss(const torch::Tensor& pool, const std::vector<std::int64_t>& anchors,
                       const PositiveSets& positives, double tau,
                       SclReduction reduction = SclReduction::Mean);

// SCL over originals as anchors, with pool = [concepts; masked_concepts] and
// positives from build_positive_sets.
torch::Tensor scl_loss(const ContrastiveBatch& batch, double tau, SclReduction reduction = SclReduction::Mean);

// R[j, k] = <c_j, m_k> / (|c_j| |m_k|) over the batch, uncentered.
torch::Tensor cross_correlation(const torch::Tensor& concepts, const torch::Tensor& masked_concepts);

// sum_j (1 - R_jj)^2 + lambda * sum_{j != k} R_jk^2.
torch::Tensor bt_loss(const torch::Tensor& R, double lambda_offdiag);

// L_y + alpha * L_DIS + beta * L_theta.
Objective msenn_total(const LossTerms& terms, const LossWeights& weights);
// L_y + beta * L_theta + lambda_SCL * L_SCL + lambda_BT * L_BT. The BT term
// may be absent only when lambda_BT is zero (SC-SENN).
Objective csenn_total(const LossTerms& terms, const LossWeights& weights);
// Plain classification (vanilla) or classification + concept supervision (CBM).
Objective baseline_total(const LossTerms& terms, double concept_weight);

// Recomputes the weighted sum from the stored parts.
double recompute_total(const LossBreakdown& breakdown, const LossWeights& weights, double concept_weight = 1.0);

}  // namespace csenn
