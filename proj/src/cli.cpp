#include "csenn/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "csenn/data.hpp"
#include "csenn/evaluation.hpp"
#include "csenn/interpret.hpp"
#include "csenn/metrics.hpp"
#include "csenn/train.hpp"
#include "json.hpp"

namespace csenn {

namespace fs = std::filesystem;

std::string display_name(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "Vanilla";
    case Variant::Cbm: return "CBM";
    case Variant::MSenn: return "M-SENN";
    case Variant::ScSenn: return "SC-SENN";
    case Variant::CSenn: return "C-SENN";
  }
  return "unknown";
}

namespace {

struct GenerateArgs {
  std::string out;
  std::size_t n = 500;
  std::uint64_t seed = 0;
  std::string split = "train";
};

struct TrainArgs {
  std::string train_manifest;
  std::string val_manifest;
  std::string out;
  std::string variant = "csenn";
  int epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t num_concepts = 21;
  std::optional<double> alpha, beta, lambda_bt_offdiag, lambda_scl, lambda_bt, tau;
  int epsilon = 10;
  double concept_weight = 1.0;
  std::string scl_reduction = "mean";
  int checkpoint_every = 0;
  double threshold = 0.5;
  bool coord_channels = true;
  bool center_inputs = true;
  bool verbose = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  double threshold = 0.5;
};

struct ExplainArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::vector<std::int64_t> concepts;
  std::size_t max_images = 8;
  bool attention = true;
};

struct ReportArgs {
  std::vector<std::string> evals;
  bool reference = false;
  std::string out_csv;
  std::string out_text;
};

struct SweepArgs {
  std::vector<std::int64_t> dcs;
  std::string train_manifest;
  std::string val_manifest;
  std::string out = "sweep";
  std::size_t n_train = 500;
  std::size_t n_val = 250;
  std::uint64_t data_seed = 1;
  int epochs = 30;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool verbose = false;
};

// Every option with its effective value, readable back through --config.
std::string resolved_config_ini(const TrainArgs& a, const TrainConfig& cfg) {
  std::ostringstream o;
  o.precision(17);
  auto q = [](const std::string& s) { return "\"" + s + "\""; };
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[train]\n" << "train=" << q(a.train_manifest) << '\n';
  if (!a.val_manifest.empty()) o << "val=" << q(a.val_manifest) << '\n';
  o << "out=" << q(a.out) << '\n'
    << "variant=" << q(to_string(cfg.variant())) << '\n'
    << "epochs=" << cfg.epochs << '\n'
    << "batch-size=" << cfg.batch_size << '\n'
    << "lr=" << cfg.learning_rate << '\n'
    << "seed=" << cfg.seed << '\n'
    << "num-concepts=" << cfg.model.num_concepts << '\n'
    << "alpha=" << cfg.weights.alpha << '\n'
    << "beta=" << cfg.weights.beta << '\n'
    << "lambda-bt-offdiag=" << cfg.weights.lambda_bt_offdiag << '\n'
    << "lambda-scl=" << cfg.weights.lambda_scl << '\n'
    << "lambda-bt=" << cfg.weights.lambda_bt << '\n'
    << "tau=" << cfg.weights.tau << '\n'
    << "epsilon=" << cfg.mask.epsilon_px << '\n'
    << "concept-weight=" << cfg.concept_weight << '\n'
    << "scl-reduction=" << q(a.scl_reduction) << '\n'
    << "checkpoint-every=" << cfg.checkpoint_every << '\n'
    << "threshold=" << cfg.threshold << '\n'
    << "coord-channels=" << b(cfg.model.coord_channels) << '\n'
    << "center-inputs=" << b(cfg.model.center_inputs) << '\n';
  return o.str();
}

TrainConfig make_train_config(const TrainArgs& a, const DatasetManifest& data) {
  TrainConfig cfg = default_train_config(parse_variant(a.variant), a.num_concepts, a.seed);
  cfg.model.height = data.height;
  cfg.model.width = data.width;
  cfg.model.coord_channels = a.coord_channels;
  cfg.model.center_inputs = a.center_inputs;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  if (a.alpha) cfg.weights.alpha = *a.alpha;
  if (a.beta) cfg.weights.beta = *a.beta;
  if (a.lambda_bt_offdiag) cfg.weights.lambda_bt_offdiag = *a.lambda_bt_offdiag;
  if (a.lambda_scl) cfg.weights.lambda_scl = *a.lambda_scl;
  if (a.lambda_bt) cfg.weights.lambda_bt = *a.lambda_bt;
  if (a.tau) cfg.weights.tau = *a.tau;
  cfg.mask.epsilon_px = a.epsilon;
  cfg.concept_weight = a.concept_weight;
  if (a.scl_reduction == "mean")
    cfg.scl_reduction = SclReduction::Mean;
  else if (a.scl_reduction == "sum")
    cfg.scl_reduction = SclReduction::Sum;
  else
    throw ConfigError("scl-reduction must be 'mean' or 'sum'");
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.threshold = a.threshold;
  cfg.run_dir = a.out;
  cfg.verbose = a.verbose;
  return cfg;
}

std::string eval_record(const EvalResult& r, const ModelConfig& model, const std::string& checkpoint,
                        const std::string& manifest) {
  nlohmann::json j;
  j["model"] = to_string(model.variant);
  j["display_name"] = display_name(model.variant);
  if (model.concept_width() > 0) j["num_concepts"] = model.concept_width();
  j["checkpoint"] = checkpoint;
  j["manifest"] = manifest;
  j["result"] = nlohmann::json::parse(eval_result_to_json(r));
  return j.dump(2) + "\n";
}

ReportEntry read_eval_record(const std::string& spec) {
  std::string name, path = spec;
  if (auto eq = spec.find('='); eq != std::string::npos) {
    name = spec.substr(0, eq);
    path = spec.substr(eq + 1);
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open evaluation file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    auto j = nlohmann::json::parse(buf.str());
    ReportEntry e;
    e.model = name.empty() ? j.value("display_name", j.value("model", path)) : name;
    if (j.contains("num_concepts")) e.num_concepts = j.at("num_concepts").get<std::int64_t>();
    e.result = eval_result_from_json(j.at("result").dump());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError("evaluation file '" + path + "': " + ex.what());
  }
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  auto manifest = generate_synthetic(a.n, a.seed, parse_split(a.split));
  const auto path = write_manifest(manifest, a.out);
  out << "wrote " << manifest.size() << " scenes to " << path << '\n';
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto data = load_manifest(a.train_manifest);
  std::optional<DatasetManifest> val;
  if (!a.val_manifest.empty()) val = load_manifest(a.val_manifest);
  auto cfg = make_train_config(a, data);
  cfg.validate();
  fs::create_directories(a.out);
  write_text_file((fs::path(a.out) / "config.ini").string(), resolved_config_ini(a, cfg));

  auto result = cfg.variant() == Variant::Cbm ? train_baseline_cbm(data, val ? &*val : nullptr, cfg)
                                              : train(data, val ? &*val : nullptr, cfg);
  const auto& r = result.report;
  out << to_string(cfg.variant()) << ": " << r.steps << " steps, initial loss " << r.initial.total
      << ", final loss " << r.final.total;
  if (!r.val_mf1.empty()) out << ", best val mF1 " << r.val_mf1[static_cast<std::size_t>(std::max(0, r.best_epoch - 1))];
  out << "\ncheckpoint: " << r.best_checkpoint << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint);
  model->eval();
  auto data = load_manifest(a.manifest);
  auto result = evaluate(model, data, a.threshold);
  const auto record = eval_record(result, model->config(), a.checkpoint, a.manifest);
  if (!a.out.empty()) write_text_file(a.out, record);
  out << display_name(model->variant()) << " mF1 " << format_metric(result.mf1) << " (F "
      << format_metric(result.per_action_f1[0]) << ", S " << format_metric(result.per_action_f1[1]) << ", R "
      << format_metric(result.per_action_f1[2]) << ", L " << format_metric(result.per_action_f1[3]) << ")\n";
  for (const auto& w : result.warnings) out << "warning: " << w << '\n';
  return kExitOk;
}

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  auto model = load_checkpoint(a.checkpoint);
  model->eval();
  const auto width = model->config().concept_width();
  if (width == 0) throw ConfigError("explain needs a model with concepts; vanilla has none");
  auto data = load_manifest(a.manifest);
  fs::create_directories(a.out);

  std::vector<std::int64_t> concepts = a.concepts;
  if (concepts.empty())
    for (std::int64_t j = 0; j < width; ++j) concepts.push_back(j);

  auto outputs = predict(model, data);
  auto corr = concept_correlation(*outputs.concepts);
  write_text_file((fs::path(a.out) / "concept_correlation.csv").string(), corr.csv());
  out << "concept correlation: mean |off-diagonal| " << mean_abs_offdiag(corr) << '\n';
  if (outputs.concept_labels) {
    std::vector<std::string> names;
    if (data.num_concept_labels == synthetic::kNumConcepts)
      names.assign(std::begin(synthetic::kConceptNames), std::end(synthetic::kConceptNames));
    try {
      auto label_corr = concept_label_correlation(*outputs.concepts, *outputs.concept_labels, names);
      write_text_file((fs::path(a.out) / "concept_label_correlation.csv").string(), label_corr.csv());
    } catch (const DegenerateColumnError& e) {
      out << "skipping concept/label correlation: " << e.what() << '\n';
    }
  }

  const auto samples = data.samples();
  const auto classes = object_classes(data);
  const std::size_t shown = std::min(a.max_images, samples.size());
  for (auto j : concepts) {
    std::vector<SaliencyMap> maps;
    const std::size_t needed = a.attention ? samples.size() : shown;
    for (std::size_t i = 0; i < needed; ++i) maps.push_back(gradcam(model, samples[i], j));
    for (std::size_t i = 0; i < shown; ++i) export_saliency_png(maps[i], samples[i], (fs::path(a.out) / "saliency").string());
    if (a.attention) {
      auto attention = object_attention(maps, samples, classes);
      write_text_file((fs::path(a.out) / ("attention_c" + std::to_string(j) + ".csv")).string(), attention.csv());
    }
  }
  out << "wrote explanations for " << concepts.size() << " concepts to " << a.out << '\n';
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<ReportEntry> entries;
  for (const auto& spec : a.evals) entries.push_back(read_eval_record(spec));
  if (entries.empty() && !a.reference) throw ConfigError("report needs --eval files and/or --reference");
  auto table = report(entries, a.reference);
  if (!a.out_csv.empty()) write_text_file(a.out_csv, table.csv());
  if (!a.out_text.empty()) write_text_file(a.out_text, table.text());
  out << table.text();
  return kExitOk;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  DatasetManifest train_set, val_set;
  if (!a.train_manifest.empty()) {
    train_set = load_manifest(a.train_manifest);
    if (a.val_manifest.empty()) throw ConfigError("sweep-dc: --val is required together with --train");
    val_set = load_manifest(a.val_manifest);
  } else {
    train_set = generate_synthetic(a.n_train, a.data_seed, Split::Train);
    val_set = generate_synthetic(a.n_val, a.data_seed + 1000, Split::Val);
  }
  fs::create_directories(a.out);

  std::vector<ReportEntry> entries;
  std::ostringstream summary;
  summary << "D_c,mean_abs_offdiag,mF1\n";
  for (auto dc : a.dcs) {
    if (dc < 1) throw ConfigError("sweep-dc: concept counts must be positive");
    const auto run_dir = fs::path(a.out) / ("dc_" + std::to_string(dc));
    auto cfg = default_train_config(Variant::CSenn, dc, a.seed);
    cfg.model.height = train_set.height;
    cfg.model.width = train_set.width;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.learning_rate = a.lr;
    cfg.run_dir = run_dir.string();
    cfg.verbose = a.verbose;
    auto result = train(train_set, &val_set, cfg);
    auto& model = result.best_model;
    model->eval();

    auto outputs = predict(model, val_set);
    auto eval = f1_scores(outputs.logits, outputs.action_labels, cfg.threshold);
    auto corr = concept_correlation(*outputs.concepts);
    const double offdiag = mean_abs_offdiag(corr);
    write_text_file((run_dir / "concept_correlation.csv").string(), corr.csv());
    write_text_file((run_dir / "eval.json").string(),
                    eval_record(eval, model->config(), result.report.best_checkpoint, "synthetic-val"));
    entries.push_back({display_name(Variant::CSenn), eval, dc});
    summary << dc << ',' << offdiag << ',' << eval.mf1 << '\n';
    out << "D_c=" << dc << ": mF1 " << format_metric(eval.mf1) << ", mean |off-diagonal| correlation "
        << offdiag << '\n';
  }
  auto table = report(entries, false);
  write_text_file((fs::path(a.out) / "sweep_report.csv").string(), table.csv());
  write_text_file((fs::path(a.out) / "sweep_report.txt").string(), table.text());
  write_text_file((fs::path(a.out) / "sweep_summary.csv").string(), summary.str());
  out << table.text();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept learning with self-explaining neural networks", "csenn"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI file; train options go under a [train] section");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic scene dataset (PNG + JSON-lines manifest)");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("-n,--n", gen.n, "Number of scenes")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--split", gen.split, "train, val or test");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model variant");
  t->fallthrough();
  t->add_option("--train", tr.train_manifest, "Training manifest")->required();
  t->add_option("--val", tr.val_manifest, "Validation manifest (checkpoint selection)");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--variant", tr.variant, "vanilla, cbm, msenn, scsenn or csenn");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--lr", tr.lr);
  t->add_option("--seed", tr.seed);
  t->add_option("--num-concepts", tr.num_concepts, "D_c");
  t->add_option("--alpha", tr.alpha, "Discriminator weight (msenn)");
  t->add_option("--beta", tr.beta, "Theta-stability weight");
  t->add_option("--lambda-bt-offdiag", tr.lambda_bt_offdiag, "Off-diagonal weight inside the BT loss");
  t->add_option("--lambda-scl", tr.lambda_scl);
  t->add_option("--lambda-bt", tr.lambda_bt);
  t->add_option("--tau", tr.tau, "SCL temperature");
  t->add_option("--epsilon", tr.epsilon, "Mask margin around boxes (pixels)");
  t->add_option("--concept-weight", tr.concept_weight, "CBM concept-supervision weight");
  t->add_option("--scl-reduction", tr.scl_reduction, "mean or sum over anchors");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Epoch cadence of extra checkpoints");
  t->add_option("--threshold", tr.threshold, "Decision threshold for validation mF1");
  t->add_option("--coord-channels", tr.coord_channels, "Append coordinate planes to the input");
  t->add_option("--center-inputs", tr.center_inputs, "Map pixels to [-1,1] before the backbone");
  t->add_flag("-v,--verbose", tr.verbose);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--out", ev.out, "Write the evaluation record (JSON) here");
  e->add_option("--threshold", ev.threshold);

  ExplainArgs ex;
  auto* x = app.add_subcommand("explain", "Saliency maps, correlation and attention matrices");
  x->add_option("--checkpoint", ex.checkpoint)->required();
  x->add_option("--manifest", ex.manifest)->required();
  x->add_option("--out", ex.out)->required();
  x->add_option("--concepts", ex.concepts, "Concept indices (default: all)");
  x->add_option("--max-images", ex.max_images, "Images exported as PNG per concept");
  x->add_option("--attention", ex.attention, "Write object attention matrices");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Table of per-action F1 and mF1");
  r->add_option("--eval", rp.evals, "Evaluation records, optionally NAME=PATH");
  r->add_flag("--reference", rp.reference, "Append the published reference rows");
  r->add_option("--csv", rp.out_csv);
  r->add_option("--text", rp.out_text);

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-dc", "Train and evaluate C-SENN for several concept counts");
  s->add_option("dcs", sw.dcs, "Concept counts, e.g. 10 21 41")->required();
  s->add_option("--train", sw.train_manifest);
  s->add_option("--val", sw.val_manifest);
  s->add_option("--out", sw.out);
  s->add_option("--n-train", sw.n_train);
  s->add_option("--n-val", sw.n_val);
  s->add_option("--data-seed", sw.data_seed);
  s->add_option("--epochs", sw.epochs);
  s->add_option("--batch-size", sw.batch_size);
  s->add_option("--lr", sw.lr);
  s->add_option("--seed", sw.seed);
  s->add_flag("-v,--verbose", sw.verbose);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*x) return cmd_explain(ex, out);
    if (*r) return cmd_report(rp, out);
    if (*s) return cmd_sweep(sw, out);
  } catch (const ConfigError& ce) {
    err << "error: " << ce.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& ex2) {
    err << "error: " << ex2.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitConfig;
}

}  // namespace csenn
