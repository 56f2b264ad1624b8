#include "csenn/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "csenn/evaluation.hpp"
#include "json.hpp"

namespace csenn {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  mask.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
  if (concept_weight < 0) throw ConfigError("concept_weight must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0, 1)");

  const auto v = variant();
  if (weights.alpha != 0 && v != Variant::MSenn)
    throw ConfigError("alpha (discriminator weight) only applies to msenn, not " + to_string(v));
  if ((weights.lambda_scl != 0 || weights.lambda_bt != 0) && !is_contrastive(v))
    throw ConfigError("lambda_scl / lambda_bt only apply to scsenn and csenn, not " + to_string(v));
  if (v == Variant::ScSenn && weights.lambda_bt != 0)
    throw ConfigError("scsenn trains without the BT term; lambda_bt must be 0");
  if (weights.beta != 0 && !is_senn(v)) throw ConfigError("beta only applies to SENN variants");
  if (is_contrastive(v) && batch_size < 2)
    throw ConfigError("batch_size must be >= 2 when contrastive losses are active");
  if (v == Variant::MSenn && batch_size < 2) throw ConfigError("msenn needs batch_size >= 2 to form mismatched pairs");
}

TrainConfig default_train_config(Variant variant, std::int64_t num_concepts, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model.variant = variant;
  cfg.model.num_concepts = num_concepts;
  cfg.weights = LossWeights::for_variant(variant);
  cfg.seed = seed;
  cfg.mask.seed = seed;
  return cfg;
}

std::vector<std::int64_t> derangement(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw ConfigError("derangement needs at least two elements");
  std::vector<std::int64_t> perm(n);
  // Sattolo's algorithm: a uniformly random n-cycle, which has no fixed points.
  std::iota(perm.begin(), perm.end(), std::int64_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  return perm;
}

namespace {

void check_finite(const LossBreakdown& b) {
  auto check = [](const std::optional<double>& v, const char* name) {
    if (v && !std::isfinite(*v)) throw NonFiniteLossError(name);
  };
  check(b.classification, "classification");
  check(b.discriminator, "discriminator");
  check(b.theta_stability, "theta_stability");
  check(b.scl, "scl");
  check(b.bt, "bt");
  check(b.concept_supervision, "concept_supervision");
  if (!std::isfinite(b.total)) throw NonFiniteLossError("total");
}

torch::Tensor images_of(ConceptNet& model, const std::vector<ImageSample>& samples) {
  const auto& cfg = model->config();
  return stack_images(std::span<const ImageSample>(samples), cfg.height, cfg.width)
      .to(model->parameters().front().scalar_type());
}

struct BreakdownMean {
  double n = 0;
  LossBreakdown sum;

  void add(const LossBreakdown& b, double weight) {
    auto acc = [&](std::optional<double>& dst, const std::optional<double>& src) {
      if (src) dst = dst.value_or(0.0) + weight * *src;
    };
    acc(sum.classification, b.classification);
    acc(sum.discriminator, b.discriminator);
    acc(sum.theta_stability, b.theta_stability);
    acc(sum.scl, b.scl);
    acc(sum.bt, b.bt);
    acc(sum.concept_supervision, b.concept_supervision);
    sum.total += weight * b.total;
    n += weight;
  }

  LossBreakdown mean() const {
    LossBreakdown out = sum;
    if (n == 0) return out;
    for (auto* v : {&out.classification, &out.discriminator, &out.theta_stability, &out.scl, &out.bt,
                    &out.concept_supervision})
      if (*v) **v /= n;
    out.total /= n;
    return out;
  }
};

}  // namespace

std::string breakdown_to_json(const LossBreakdown& b) {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("classification", b.classification);
  put("discriminator", b.discriminator);
  put("theta_stability", b.theta_stability);
  put("scl", b.scl);
  put("bt", b.bt);
  put("concept_supervision", b.concept_supervision);
  j["total"] = b.total;
  return j.dump();
}

Objective compute_objective(ConceptNet& model, const TrainConfig& config, const std::vector<ImageSample>& samples,
                            const std::vector<ImageSample>& masked, std::mt19937_64& rng) {
  const auto variant = model->variant();
  auto images = images_of(model, samples);
  auto labels = stack_action_labels(std::span<const ImageSample>(samples)).to(images.dtype());
  LossTerms terms;

  switch (variant) {
    case Variant::Vanilla: {
      auto out = model->forward(images);
      terms.classification = classification_loss(out.logits, labels);
      return baseline_total(terms, config.concept_weight);
    }
    case Variant::Cbm: {
      auto out = model->forward(images);
      auto concept_labels = stack_concept_labels(std::span<const ImageSample>(samples)).to(images.dtype());
      terms.classification = classification_loss(out.logits, labels);
      terms.concept_supervision = classification_loss(out.concepts->values, concept_labels);
      return baseline_total(terms, config.concept_weight);
    }
    case Variant::MSenn: {
      auto feature = model->encode_intermediate(images);
      auto out = model->forward_features(feature);
      terms.classification = classification_loss(out.logits, labels);
      terms.theta_stability = theta_stability_loss(model, feature);
      const auto b = static_cast<std::size_t>(feature.batch());
      auto partner = torch::tensor(derangement(b, rng), torch::kInt64);
      auto joint = make_joint_code(*out.concepts, feature);
      JointCode mismatched{torch::cat({out.concepts->values, feature.flat().index_select(0, partner)}, 1)};
      terms.discriminator = discriminator_loss(model->discriminate(joint), model->discriminate(mismatched));
      return msenn_total(terms, config.weights);
    }
    case Variant::ScSenn:
    case Variant::CSenn: {
      if (masked.size() != samples.size())
        throw ConfigError("contrastive objective needs one masked twin per sample");
      const auto b = images.size(0);
      auto both = torch::cat({images, images_of(model, masked)}, 0);
      auto all = model->encode_intermediate(both);
      SpatialFeature original{all.map.narrow(0, 0, b)};
      SpatialFeature masked_feature{all.map.narrow(0, b, b)};
      auto out = model->forward_features(original);
      auto masked_concepts = model->encode_concepts(masked_feature).values;
      terms.classification = classification_loss(out.logits, labels);
      terms.theta_stability = theta_stability_loss(model, original);
      ContrastiveBatch cb{out.concepts->values, masked_concepts, labels};
      terms.scl = scl_loss(cb, config.weights.tau, config.scl_reduction);
      if (variant == Variant::CSenn)
        terms.bt = bt_loss(cross_correlation(out.concepts->values, masked_concepts), config.weights.lambda_bt_offdiag);
      return csenn_total(terms, config.weights);
    }
  }
  throw ConfigError("unknown variant");
}

namespace {

BatchOptions batch_options(const TrainConfig& config, std::uint64_t seed) {
  BatchOptions opt;
  opt.batch_size = config.batch_size;
  opt.seed = seed;
  opt.with_mask = is_contrastive(config.variant());
  opt.mask = config.mask;
  opt.contrastive = is_contrastive(config.variant());
  opt.min_tail = (opt.contrastive || config.variant() == Variant::MSenn) ? 2 : 1;
  return opt;
}

constexpr std::uint64_t kEvalPassSeed = 0x5eedULL;

}  // namespace

LossBreakdown evaluate_objective(ConceptNet& model, const TrainConfig& config, const DatasetManifest& data) {
  BatchStream stream(data, batch_options(config, kEvalPassSeed));
  std::mt19937_64 rng(kEvalPassSeed);
  BreakdownMean mean;
  while (auto batch = stream.next()) {
    auto obj = compute_objective(model, config, batch->samples, batch->masked, rng);
    mean.add(obj.breakdown, static_cast<double>(batch->samples.size()));
  }
  return mean.mean();
}

TrainResult train(const DatasetManifest& data, const DatasetManifest* val, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  config.model.seed = config.seed;
  config.validate();
  if (data.size() == 0) throw ConfigError("training set is empty");
  if (config.variant() == Variant::Cbm && data.num_concept_labels == 0)
    throw ConfigError("cbm needs concept labels in the training manifest");
  if (config.variant() == Variant::Cbm) config.model.num_concept_labels = data.num_concept_labels;
  if (data.height != config.model.height || data.width != config.model.width)
    throw ConfigError("manifest images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      " but the model expects " + std::to_string(config.model.height) + "x" +
                      std::to_string(config.model.width));
  const DatasetManifest& val_set = val != nullptr ? *val : data;

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.final_model = ConceptNet(config.model);
  auto& model = result.final_model;
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));

  std::ofstream log;
  fs::path ckpt_dir;
  if (!config.run_dir.empty()) {
    fs::create_directories(config.run_dir);
    ckpt_dir = fs::path(config.run_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
    log.open(fs::path(config.run_dir) / "train_log.jsonl");
  }

  auto& report = result.report;
  report.initial = evaluate_objective(model, config, data);
  double best_mf1 = -1.0;
  result.best_model = clone_model(model);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch);
    BatchStream stream(data, batch_options(config, epoch_seed));
    std::mt19937_64 pair_rng(epoch_seed ^ 0x9e3779b97f4a7c15ULL);
    BreakdownMean mean;
    model->train();
    while (auto batch = stream.next()) {
      auto obj = compute_objective(model, config, batch->samples, batch->masked, pair_rng);
      check_finite(obj.breakdown);
      optimizer.zero_grad();
      obj.total.backward();
      optimizer.step();
      ++report.steps;
      mean.add(obj.breakdown, static_cast<double>(batch->samples.size()));
      if (log.is_open()) {
        auto line = nlohmann::json::parse(breakdown_to_json(obj.breakdown));
        line["step"] = report.steps;
        line["epoch"] = epoch;
        log << line.dump() << '\n';
      }
    }
    report.empty_box_masks += stream.empty_box_masks();

    model->eval();
    EpochSummary summary{epoch, mean.mean(), evaluate(model, val_set, config.threshold).mf1};
    report.epochs.push_back(summary);
    report.val_mf1.push_back(summary.val_mf1);
    if (config.verbose)
      std::cerr << to_string(config.variant()) << " epoch " << epoch << " loss " << summary.mean.total
                << " val mF1 " << summary.val_mf1 << '\n';
    if (summary.val_mf1 > best_mf1) {
      best_mf1 = summary.val_mf1;
      report.best_epoch = epoch;
      result.best_model = clone_model(model);
      if (!ckpt_dir.empty()) {
        report.best_checkpoint = (ckpt_dir / "best.pt").string();
        save_checkpoint(result.best_model, report.best_checkpoint);
      }
    }
    if (!ckpt_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.pt", epoch);
      save_checkpoint(model, (ckpt_dir / name).string());
    }
  }

  report.final = evaluate_objective(model, config, data);
  if (!ckpt_dir.empty()) {
    save_checkpoint(model, (ckpt_dir / "final.pt").string());
    if (report.best_checkpoint.empty()) {
      report.best_checkpoint = (ckpt_dir / "best.pt").string();
      save_checkpoint(result.best_model, report.best_checkpoint);
    }
  }
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!config.run_dir.empty()) {
    nlohmann::json j;
    j["variant"] = to_string(config.variant());
    j["num_concepts"] = config.model.num_concepts;
    j["seed"] = config.seed;
    j["steps"] = report.steps;
    j["best_epoch"] = report.best_epoch;
    j["best_checkpoint"] = report.best_checkpoint;
    j["val_mF1"] = report.val_mf1;
    j["initial"] = nlohmann::json::parse(breakdown_to_json(report.initial));
    j["final"] = nlohmann::json::parse(breakdown_to_json(report.final));
    j["empty_box_masks"] = report.empty_box_masks;
    j["wall_clock_s"] = report.wall_clock_s;
    std::ofstream(fs::path(config.run_dir) / "train_report.json") << j.dump(2) << '\n';
  }
  return result;
}

TrainResult train_baseline_cbm(const DatasetManifest& data, const DatasetManifest* val, TrainConfig config) {
  if (data.num_concept_labels == 0) throw ConfigError("cbm baseline needs concept labels");
  for (const auto& e : data.entries)
    if (!e.sample.concept_labels) throw ConfigError("sample '" + e.sample.sample_id + "' has no concept labels");
  config.model.variant = Variant::Cbm;
  return train(data, val, config);
}

}  // namespace csenn
