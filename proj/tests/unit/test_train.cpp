#include <filesystem>
#include <fstream>
#include <set>

#include "csenn/evaluation.hpp"
#include "csenn/positive_sets.hpp"
#include "csenn/train.hpp"
#include "doctest_torch.hpp"
#include "json.hpp"

using namespace csenn;
namespace fs = std::filesystem;

namespace {

std::vector<torch::Tensor> snapshot(ConceptNet& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m->parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same_params(ConceptNet& m, const std::vector<torch::Tensor>& snap) {
  auto ps = m->parameters();
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!torch::equal(ps[i], snap[i])) return false;
  return true;
}

TrainConfig small_config(Variant v, int epochs = 1) {
  auto cfg = default_train_config(v, 5, 3);
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  return cfg;
}

const DatasetManifest& tiny_set() {
  static const DatasetManifest m = generate_synthetic(24, 17);
  return m;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("positive sets") {
  SUBCASE("two samples share a label") {
    auto p = build_positive_sets(torch::tensor({1, 0, 1, 0, 0, 1}).view({3, 2}));
    // Pool rows: originals 0..2, masked twins 3..5.
    CHECK(p[0] == std::vector<std::int64_t>{1, 3, 4});
    CHECK(std::find(p[0].begin(), p[0].end(), 2) == p[0].end());
    CHECK(p[2] == std::vector<std::int64_t>{5});
  }
  SUBCASE("all distinct labels give the masked self only") {
    auto p = build_positive_sets(torch::tensor({1, 0, 0, 1, 1, 1}).view({3, 2}));
    for (std::int64_t i = 0; i < 3; ++i) CHECK(p[i] == std::vector<std::int64_t>{i + 3});
  }
  SUBCASE("all identical labels, B = 3") {
    auto p = build_positive_sets(torch::ones({3, 4}));
    for (const auto& s : p) CHECK(s.size() == 5);
  }
}

TEST_CASE("derangement has no fixed points") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {2, 3, 7, 32}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto d = derangement(n, rng);
      std::set<std::int64_t> seen(d.begin(), d.end());
      CHECK(seen.size() == n);
      for (std::size_t i = 0; i < n; ++i) CHECK(d[i] != static_cast<std::int64_t>(i));
    }
  }
}

TEST_CASE("config validation ties weights to the variant") {
  auto cfg = small_config(Variant::CSenn);
  CHECK_NOTHROW(cfg.validate());
  cfg.weights.alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  auto v = small_config(Variant::Vanilla);
  v.weights.lambda_scl = 1.0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  auto sc = small_config(Variant::ScSenn);
  CHECK(sc.weights.lambda_bt == 0.0);
  sc.batch_size = 1;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
  for (auto v : {Variant::CSenn, Variant::MSenn, Variant::Vanilla, Variant::Cbm}) {
    auto cfg = small_config(v);
    cfg.learning_rate = 0.0;
    auto mc = cfg.model;
    mc.seed = cfg.seed;
    ConceptNet fresh(mc);
    auto before = snapshot(fresh);
    auto r = v == Variant::Cbm ? train_baseline_cbm(tiny_set(), nullptr, cfg) : train(tiny_set(), nullptr, cfg);
    CHECK(same_params(r.final_model, before));
    CHECK(r.report.final.total == r.report.initial.total);
  }
}

TEST_CASE("training is deterministic") {
  auto cfg = small_config(Variant::CSenn, 2);
  auto a = train(tiny_set(), nullptr, cfg);
  auto b = train(tiny_set(), nullptr, cfg);
  CHECK(a.report.final.total == b.report.final.total);
  REQUIRE(a.report.epochs.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.report.epochs[i].mean.total == b.report.epochs[i].mean.total);
  CHECK(same_params(a.final_model, snapshot(b.final_model)));
}

TEST_CASE("one step moves every part of the C-SENN model") {
  auto cfg = small_config(Variant::CSenn);
  cfg.model.seed = cfg.seed;
  ConceptNet m(cfg.model);
  auto groups = m->parameter_groups();
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> before;
  for (auto& [name, ps] : groups) {
    std::vector<torch::Tensor> copy;
    for (auto& p : ps) copy.push_back(p.detach().clone());
    before.emplace_back(name, copy);
  }
  std::vector<ImageSample> samples, masked;
  for (std::size_t i = 0; i < 8; ++i) {
    samples.push_back(tiny_set().entries[i].sample);
    masked.push_back(mask_image(samples.back(), cfg.mask));
  }
  torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(1e-2));
  std::mt19937_64 rng(0);
  auto obj = compute_objective(m, cfg, samples, masked, rng);
  opt.zero_grad();
  obj.total.backward();
  opt.step();
  std::set<std::string> names;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    names.insert(groups[g].first);
    bool changed = false;
    for (std::size_t i = 0; i < groups[g].second.size(); ++i)
      changed = changed || !torch::equal(groups[g].second[i], before[g].second[i]);
    CHECK_MESSAGE(changed, groups[g].first);
  }
  CHECK(names == std::set<std::string>{"backbone", "concept_head", "relevance_head"});
}

TEST_CASE("contrastive objective needs masked twins") {
  auto cfg = small_config(Variant::CSenn);
  ConceptNet m(cfg.model);
  std::vector<ImageSample> samples{tiny_set().entries[0].sample, tiny_set().entries[1].sample};
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(compute_objective(m, cfg, samples, {}, rng), ConfigError);
}

TEST_CASE("logged totals recompute from their parts") {
  const auto dir = fs::temp_directory_path() / "csenn_train_log";
  fs::remove_all(dir);
  for (auto v : {Variant::CSenn, Variant::MSenn, Variant::Cbm}) {
    auto cfg = small_config(v);
    cfg.run_dir = (dir / to_string(v)).string();
    auto r = v == Variant::Cbm ? train_baseline_cbm(tiny_set(), nullptr, cfg) : train(tiny_set(), nullptr, cfg);
    CHECK(fs::exists(fs::path(cfg.run_dir) / "checkpoints" / "best.pt"));
    CHECK(fs::exists(fs::path(cfg.run_dir) / "checkpoints" / "final.pt"));
    CHECK(fs::exists(fs::path(cfg.run_dir) / "train_report.json"));
    std::ifstream in(fs::path(cfg.run_dir) / "train_log.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      LossBreakdown b;
      auto opt = [&](const char* key, std::optional<double>& slot) {
        if (!j.at(key).is_null()) slot = j.at(key).get<double>();
      };
      opt("classification", b.classification);
      opt("discriminator", b.discriminator);
      opt("theta_stability", b.theta_stability);
      opt("scl", b.scl);
      opt("bt", b.bt);
      opt("concept_supervision", b.concept_supervision);
      CHECK(std::abs(recompute_total(b, cfg.weights, cfg.concept_weight) - j.at("total").get<double>()) < 1e-10);
      if (v == Variant::MSenn) CHECK(j.at("scl").is_null());
      if (v == Variant::CSenn) CHECK(j.at("discriminator").is_null());
      ++n;
    }
    CHECK(n == r.report.steps);
  }
  fs::remove_all(dir);
}

TEST_CASE("cbm requires concept labels") {
  auto data = tiny_set();
  data.num_concept_labels = 0;
  for (auto& e : data.entries) e.sample.concept_labels.reset();
  CHECK_THROWS_AS(train_baseline_cbm(data, nullptr, small_config(Variant::Cbm)), ConfigError);
}

TEST_CASE("C-SENN loss descends over 30 epochs on 200 scenes") {
  auto data = generate_synthetic(200, 8);
  auto cfg = default_train_config(Variant::CSenn, 21, 0);
  auto r = train(data, nullptr, cfg);
  CHECK(r.report.epochs.size() == 30);
  CHECK(r.report.val_mf1.size() == 30);
  CHECK(r.report.final.total < r.report.initial.total);
}

TEST_CASE("masked samples never reach evaluation") {
  auto data = tiny_set();
  data.entries[3].sample = mask_image(data.entries[3].sample, {});
  ConceptNet m(small_config(Variant::CSenn).model);
  CHECK_THROWS_AS(predict(m, data), ConfigError);
}

}  // TEST_SUITE
