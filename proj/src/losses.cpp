#include "csenn/losses.hpp"

#include <cmath>

namespace csenn {

namespace {

constexpr double kNormFloor = 1e-12;

double value_of(const torch::Tensor& t) { return t.detach().to(torch::kDouble).item<double>(); }

}  // namespace

LossWeights LossWeights::for_variant(Variant v) {
  LossWeights w;
  switch (v) {
    case Variant::Vanilla:
    case Variant::Cbm:
      w.beta = 0.0;
      w.lambda_scl = 0.0;
      w.lambda_bt = 0.0;
      break;
    case Variant::MSenn:
      w.alpha = 1.0;
      w.lambda_scl = 0.0;
      w.lambda_bt = 0.0;
      break;
    case Variant::ScSenn:
      w.lambda_bt = 0.0;
      break;
    case Variant::CSenn:
      break;
  }
  return w;
}

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || lambda_bt_offdiag < 0 || lambda_scl < 0 || lambda_bt < 0)
    throw ConfigError("loss weights must be non-negative");
  if (!(tau > 0)) throw ConfigError("SCL temperature tau must be positive");
}

void ContrastiveBatch::validate() const {
  if (concepts.dim() != 2 || masked_concepts.dim() != 2 || labels.dim() != 2)
    throw ShapeError("contrastive batch tensors must be 2-d");
  if (concepts.sizes() != masked_concepts.sizes())
    throw ShapeError("concepts and masked_concepts must have the same shape");
  if (labels.size(0) != concepts.size(0)) throw ShapeError("labels and concepts must have the same row count");
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.sizes() != labels.sizes()) throw ShapeError("classification_loss: logits and labels differ in shape");
  return torch::binary_cross_entropy_with_logits(logits, labels.to(logits.dtype()));
}

torch::Tensor discriminator_loss(const torch::Tensor& d_joint, const torch::Tensor& d_mismatched) {
  if (d_joint.sizes() != d_mismatched.sizes()) throw ShapeError("discriminator_loss: input shapes differ");
  return ((d_joint - 1.0).pow(2) + d_mismatched.pow(2)).mean();
}

double discriminator_loss(double d_joint, double d_mismatched) {
  return (d_joint - 1.0) * (d_joint - 1.0) + d_mismatched * d_mismatched;
}

torch::Tensor theta_stability_loss(ConceptNet& model, const SpatialFeature& feature) {
  torch::AutoGradMode enable(true);
  SpatialFeature feat = feature;
  if (!feat.map.requires_grad()) feat.map = feat.map.detach().requires_grad_(true);

  auto c = model->encode_concepts(feat).values;
  auto theta = model->relevance(feat).weights;
  auto f = aggregate({theta}, {c});

  const auto k = f.size(1);
  const auto d = c.size(1);
  auto per_sample = torch::zeros({feat.batch()}, f.options());
  auto grad_of = [&](const torch::Tensor& scalar) {
    auto g = torch::autograd::grad({scalar}, {feat.map}, {}, /*retain_graph=*/true,
                                   /*create_graph=*/true, /*allow_unused=*/true)[0];
    return g.defined() ? g.flatten(1) : torch::zeros_like(feat.map).flatten(1);
  };
  // Samples are independent, so the gradient of a batch sum holds the
  // per-sample gradients. Rows of J^c_h: B x D_c x D_h.
  std::vector<torch::Tensor> rows;
  for (std::int64_t i = 0; i < d; ++i) rows.push_back(grad_of(c.select(1, i).sum()));
  auto jc = torch::stack(rows, 1);
  for (std::int64_t j = 0; j < k; ++j) {
    auto grad_f = grad_of(f.select(1, j).sum());
    // theta enters as a value here, but stays in the graph for training.
    auto theta_jc = (theta.select(2, j).unsqueeze(2) * jc).sum(1);
    per_sample = per_sample + (grad_f - theta_jc).pow(2).sum(1);
  }
  return per_sample.mean();
}

torch::Tensor scl_loss(const torch::Tensor& pool, const std::vector<std::int64_t>& anchors,
                       const PositiveSets& positives, double tau, SclReduction reduction) {
  if (pool.dim() != 2) throw ShapeError("scl_loss: pool must be N x D");
  if (anchors.size() != positives.size()) throw ShapeError("scl_loss: one positive set per anchor required");
  if (anchors.empty()) throw ShapeError("scl_loss: no anchors");
  if (!(tau > 0)) throw ConfigError("scl_loss: tau must be positive");
  const auto n = pool.size(0);
  if (n < 2) throw ShapeError("scl_loss: pool needs at least two rows");

  auto norms = pool.norm(2, 1);
  auto small = (norms.detach() < kNormFloor).nonzero();
  if (small.size(0) > 0)
    throw DegenerateColumnError("scl_loss: zero-norm concept vector", small[0][0].item<std::int64_t>());
  auto unit = pool / norms.unsqueeze(1);

  auto anchor_idx = torch::tensor(anchors, torch::kInt64);
  auto sim = unit.index_select(0, anchor_idx).matmul(unit.t()) / tau;  // A x N
  auto self_mask = torch::zeros({static_cast<std::int64_t>(anchors.size()), n}, torch::kBool);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (anchors[a] < 0 || anchors[a] >= n) throw ShapeError("scl_loss: anchor index out of range");
    self_mask[static_cast<std::int64_t>(a)][anchors[a]] = true;
  }
  auto log_denominator =
      torch::logsumexp(sim.masked_fill(self_mask, -std::numeric_limits<double>::infinity()), 1);
  auto log_prob = sim - log_denominator.unsqueeze(1);

  std::vector<torch::Tensor> per_anchor;
  per_anchor.reserve(anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto& p = positives[a];
    if (p.empty()) throw ShapeError("scl_loss: anchor " + std::to_string(anchors[a]) + " has no positives");
    for (auto idx : p)
      if (idx == anchors[a] || idx < 0 || idx >= n)
        throw ShapeError("scl_loss: invalid positive index for anchor " + std::to_string(anchors[a]));
    auto row = log_prob[static_cast<std::int64_t>(a)].index_select(0, torch::tensor(p, torch::kInt64));
    per_anchor.push_back(-row.mean());
  }
  auto losses = torch::stack(per_anchor);
  return reduction == SclReduction::Mean ? losses.mean() : losses.sum();
}

torch::Tensor scl_loss(const ContrastiveBatch& batch, double tau, SclReduction reduction) {
  batch.validate();
  const auto b = batch.concepts.size(0);
  if (b < 1) throw ShapeError("scl_loss: empty batch");
  auto pool = torch::cat({batch.concepts, batch.masked_concepts}, 0);
  std::vector<std::int64_t> anchors(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) anchors[static_cast<std::size_t>(i)] = i;
  return scl_loss(pool, anchors, build_positive_sets(batch.labels), tau, reduction);
}

torch::Tensor cross_correlation(const torch::Tensor& concepts, const torch::Tensor& masked_concepts) {
  if (concepts.dim() != 2 || concepts.sizes() != masked_concepts.sizes())
    throw ShapeError("cross_correlation: inputs must be B x D_c matrices of equal shape");
  auto check = [](const torch::Tensor& norms, const char* which) {
    auto small = (norms.detach() < kNormFloor).nonzero();
    if (small.size(0) > 0)
      throw DegenerateColumnError(std::string("cross_correlation: zero-norm column in ") + which,
                                  small[0][0].item<std::int64_t>());
  };
  auto nc = concepts.norm(2, 0);
  auto nm = masked_concepts.norm(2, 0);
  check(nc, "concepts");
  check(nm, "masked_concepts");
  return concepts.t().matmul(masked_concepts) / nc.unsqueeze(1) / nm.unsqueeze(0);
}

torch::Tensor bt_loss(const torch::Tensor& R, double lambda_offdiag) {
  if (R.dim() != 2 || R.size(0) != R.size(1)) throw ShapeError("bt_loss: R must be square");
  auto eye = torch::eye(R.size(0), R.options());
  auto on_diag = (1.0 - R.diagonal()).pow(2).sum();
  auto off_diag = (R.pow(2) * (1.0 - eye)).sum();
  return on_diag + lambda_offdiag * off_diag;
}

namespace {

struct Accumulator {
  torch::Tensor total;
  double value = 0.0;

  void add(const torch::Tensor& term, double weight, std::optional<double>& slot) {
    slot = value_of(term);
    value += weight * *slot;
    auto weighted = term * weight;
    total = total.defined() ? total + weighted : weighted;
  }
};

void require(const std::optional<torch::Tensor>& term, const char* name, const char* objective) {
  if (!term) throw ConfigError(std::string(objective) + ": missing " + name + " term");
}

}  // namespace

Objective msenn_total(const LossTerms& terms, const LossWeights& weights) {
  require(terms.classification, "classification", "msenn_total");
  require(terms.discriminator, "discriminator", "msenn_total");
  require(terms.theta_stability, "theta_stability", "msenn_total");
  if (terms.scl || terms.bt) throw ConfigError("msenn_total: contrastive terms do not belong to the M-SENN objective");
  Objective out;
  Accumulator acc;
  acc.add(*terms.classification, 1.0, out.breakdown.classification);
  acc.add(*terms.discriminator, weights.alpha, out.breakdown.discriminator);
  acc.add(*terms.theta_stability, weights.beta, out.breakdown.theta_stability);
  out.total = acc.total;
  out.breakdown.total = acc.value;
  return out;
}

Objective csenn_total(const LossTerms& terms, const LossWeights& weights) {
  require(terms.classification, "classification", "csenn_total");
  require(terms.theta_stability, "theta_stability", "csenn_total");
  require(terms.scl, "scl", "csenn_total");
  if (terms.discriminator)
    throw ConfigError("csenn_total: the discriminator term is replaced by SCL and must not be supplied");
  if (!terms.bt && weights.lambda_bt != 0.0) throw ConfigError("csenn_total: missing bt term");
  Objective out;
  Accumulator acc;
  acc.add(*terms.classification, 1.0, out.breakdown.classification);
  acc.add(*terms.theta_stability, weights.beta, out.breakdown.theta_stability);
  acc.add(*terms.scl, weights.lambda_scl, out.breakdown.scl);
  if (terms.bt) acc.add(*terms.bt, weights.lambda_bt, out.breakdown.bt);
  out.total = acc.total;
  out.breakdown.total = acc.value;
  return out;
}

Objective baseline_total(const LossTerms& terms, double concept_weight) {
  require(terms.classification, "classification", "baseline_total");
  if (terms.discriminator || terms.theta_stability || terms.scl || terms.bt)
    throw ConfigError("baseline_total: only classification and concept supervision terms are allowed");
  Objective out;
  Accumulator acc;
  acc.add(*terms.classification, 1.0, out.breakdown.classification);
  if (terms.concept_supervision)
    acc.add(*terms.concept_supervision, concept_weight, out.breakdown.concept_supervision);
  out.total = acc.total;
  out.breakdown.total = acc.value;
  return out;
}

double recompute_total(const LossBreakdown& b, const LossWeights& w, double concept_weight) {
  double total = 0.0;
  if (b.classification) total += *b.classification;
  if (b.discriminator) total += w.alpha * *b.discriminator;
  if (b.theta_stability) total += w.beta * *b.theta_stability;
  if (b.scl) total += w.lambda_scl * *b.scl;
  if (b.bt) total += w.lambda_bt * *b.bt;
  if (b.concept_supervision) total += concept_weight * *b.concept_supervision;
  return total;
}

}  // namespace csenn
