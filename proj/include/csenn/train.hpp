#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "csenn/augment.hpp"
#include "csenn/data.hpp"
#include "csenn/losses.hpp"
#include "csenn/metrics.hpp"
#include "csenn/model.hpp"

namespace csenn {

struct TrainConfig {
  // Variant, D_c and input size live in the model config; its seed is
  // overwritten by `seed` below.
  ModelConfig model;
  int epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  LossWeights weights = LossWeights::for_variant(Variant::CSenn);
  MaskConfig mask;
  std::uint64_t seed = 0;
  double concept_weight = 1.0;  // CBM concept-supervision weight
  SclReduction scl_reduction = SclReduction::Mean;
  int checkpoint_every = 0;     // epochs; 0 keeps only best and final
  double threshold = 0.5;
  std::string run_dir;          // empty: nothing written to disk
  bool verbose = false;

  Variant variant() const { return model.variant; }
  // Rejects weights that do not belong to the variant's objective.
  void validate() const;
};

// Convenience: defaults for one variant with the given D_c and seed.
TrainConfig default_train_config(Variant variant, std::int64_t num_concepts = 21, std::uint64_t seed = 0);

struct EpochSummary {
  int epoch = 0;
  LossBreakdown mean;
  double val_mf1 = 0.0;
};

struct TrainReport {
  std::vector<EpochSummary> epochs;
  std::vector<double> val_mf1;
  int best_epoch = 0;  // 0: the initial parameters
  std::string best_checkpoint;
  double wall_clock_s = 0.0;
  LossBreakdown initial;  // full pass over the training set before any step
  LossBreakdown final;    // same pass after the last step
  std::size_t steps = 0;
  std::size_t empty_box_masks = 0;
};

struct TrainResult {
  TrainReport report;
  ConceptNet final_model{nullptr};
  ConceptNet best_model{nullptr};
};

// A random derangement of 0..n-1 (no fixed points); n >= 2.
std::vector<std::int64_t> derangement(std::size_t n, std::mt19937_64& rng);

// Objective of one batch for the model's variant. `masked` must hold the
// masked twins for contrastive variants; `rng` drives M-SENN pairing.
Objective compute_objective(ConceptNet& model, const TrainConfig& config, const std::vector<ImageSample>& samples,
                            const std::vector<ImageSample>& masked, std::mt19937_64& rng);

// Average objective over one deterministic pass (no parameter updates).
LossBreakdown evaluate_objective(ConceptNet& model, const TrainConfig& config, const DatasetManifest& data);

// Trains config.variant. Validation mF1 is tracked on `val` (the training set
// when null) and selects the best checkpoint.
TrainResult train(const DatasetManifest& data, const DatasetManifest* val, const TrainConfig& config);

// CBM baseline: requires concept labels on every training entry.
TrainResult train_baseline_cbm(const DatasetManifest& data, const DatasetManifest* val, TrainConfig config);

std::string breakdown_to_json(const LossBreakdown& b);

}  // namespace csenn
