#include "csenn/model.hpp"

#include <algorithm>
#include <cstring>

#include "json.hpp"

namespace csenn {

namespace {

constexpr const char* kManifestKey = "__manifest__";
constexpr int kCheckpointFormat = 1;

std::int64_t conv_out(std::int64_t size) { return (size - 1) / 2 + 1; }

std::string archive_key(std::string name) {
  std::replace(name.begin(), name.end(), '.', '/');
  return name;
}

}  // namespace

Variant parse_variant(std::string_view name) {
  if (name == "vanilla") return Variant::Vanilla;
  if (name == "cbm") return Variant::Cbm;
  if (name == "msenn") return Variant::MSenn;
  if (name == "scsenn") return Variant::ScSenn;
  if (name == "csenn") return Variant::CSenn;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected vanilla, cbm, msenn, scsenn or csenn)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Cbm: return "cbm";
    case Variant::MSenn: return "msenn";
    case Variant::ScSenn: return "scsenn";
    case Variant::CSenn: return "csenn";
  }
  return "unknown";
}

bool is_senn(Variant v) { return v == Variant::MSenn || v == Variant::ScSenn || v == Variant::CSenn; }

bool is_contrastive(Variant v) { return v == Variant::ScSenn || v == Variant::CSenn; }

HeadKind parse_head_kind(std::string_view name) {
  if (name == "mlp") return HeadKind::Mlp;
  if (name == "linear") return HeadKind::Linear;
  if (name == "constant") return HeadKind::Constant;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Mlp: return "mlp";
    case HeadKind::Linear: return "linear";
    case HeadKind::Constant: return "constant";
  }
  return "unknown";
}

std::int64_t ModelConfig::feature_height() const {
  std::int64_t h = height;
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) h = conv_out(h);
  return h;
}

std::int64_t ModelConfig::feature_width() const {
  std::int64_t w = width;
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) w = conv_out(w);
  return w;
}

std::int64_t ModelConfig::concept_width() const {
  if (is_senn(variant)) return num_concepts;
  if (variant == Variant::Cbm) return num_concept_labels;
  return 0;
}

void ModelConfig::validate() const {
  if (height < 1 || width < 1) throw ConfigError("input size must be positive");
  if (backbone_channels.empty()) throw ConfigError("backbone needs at least one conv block");
  for (auto c : backbone_channels)
    if (c < 1) throw ConfigError("backbone channel counts must be positive");
  if (hidden < 1 || disc_hidden < 1) throw ConfigError("hidden widths must be positive");
  if (num_concepts < 1) throw ConfigError("num_concepts must be positive");
  if (num_actions < 1) throw ConfigError("num_actions must be positive");
  if (variant == Variant::Cbm && num_concept_labels < 1)
    throw ConfigError("cbm needs num_concept_labels >= 1");
  if (concept_head == HeadKind::Constant) throw ConfigError("concept head cannot be constant");
}

JointCode make_joint_code(const ConceptVector& concepts, const SpatialFeature& feature) {
  if (concepts.values.size(0) != feature.batch())
    throw ShapeError("joint code: concept and feature batch sizes differ");
  return {torch::cat({concepts.values, feature.flat()}, 1)};
}

torch::Tensor aggregate(const RelevanceTensor& theta, const ConceptVector& concepts) {
  const auto& w = theta.weights;
  const auto& c = concepts.values;
  if (w.dim() != 3 || c.dim() != 2 || w.size(0) != c.size(0) || w.size(1) != c.size(1))
    throw ShapeError("aggregate: theta must be B x D_c x k and c must be B x D_c, got " +
                     std::to_string(w.dim()) + "-d and " + std::to_string(c.dim()) + "-d tensors");
  return (w * c.unsqueeze(2)).sum(1);
}

namespace {

template <typename SamplePtrs>
torch::Tensor stack_images_impl(const SamplePtrs& samples, int height, int width) {
  const auto n = static_cast<std::int64_t>(samples.size());
  auto out = torch::empty({n, 3, height, width});
  auto acc = out.accessor<float, 4>();
  for (std::int64_t b = 0; b < n; ++b) {
    const ImageSample& s = *samples[b];
    if (s.height != height || s.width != width ||
        s.pixels.size() != static_cast<std::size_t>(height) * width * 3)
      throw ShapeError("sample '" + s.sample_id + "' is " + std::to_string(s.height) + "x" +
                       std::to_string(s.width) + ", model expects " + std::to_string(height) + "x" +
                       std::to_string(width));
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int ch = 0; ch < 3; ++ch) acc[b][ch][y][x] = s.at(y, x, ch);
  }
  return out;
}

}  // namespace

torch::Tensor stack_images(std::span<const ImageSample> samples, int height, int width) {
  std::vector<const ImageSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_images_impl(ptrs, height, width);
}

torch::Tensor stack_images(std::span<const ImageSample* const> samples, int height, int width) {
  return stack_images_impl(samples, height, width);
}

torch::Tensor stack_action_labels(std::span<const ImageSample> samples) {
  if (samples.empty()) return torch::empty({0, kNumActions});
  const auto k = static_cast<std::int64_t>(samples.front().action_labels.size());
  auto out = torch::empty({static_cast<std::int64_t>(samples.size()), k});
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (static_cast<std::int64_t>(samples[b].action_labels.size()) != k)
      throw ShapeError("action label lengths differ within batch");
    for (std::int64_t j = 0; j < k; ++j) out[b][j] = static_cast<float>(samples[b].action_labels[j]);
  }
  return out;
}

torch::Tensor stack_concept_labels(std::span<const ImageSample> samples) {
  if (samples.empty()) return torch::empty({0, 0});
  if (!samples.front().concept_labels) throw SchemaError("sample '" + samples.front().sample_id + "' has no concept labels");
  const auto l = static_cast<std::int64_t>(samples.front().concept_labels->size());
  auto out = torch::empty({static_cast<std::int64_t>(samples.size()), l});
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& labels = samples[b].concept_labels;
    if (!labels) throw SchemaError("sample '" + samples[b].sample_id + "' has no concept labels");
    if (static_cast<std::int64_t>(labels->size()) != l)
      throw ShapeError("concept label lengths differ within batch");
    for (std::int64_t j = 0; j < l; ++j) out[b][j] = static_cast<float>((*labels)[j]);
  }
  return out;
}

ConceptNetImpl::ConceptNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  namespace nn = torch::nn;

  backbone_ = nn::Sequential();
  std::int64_t in_ch = config_.input_channels();
  for (auto out_ch : config_.backbone_channels) {
    nn::Conv2d conv(nn::Conv2dOptions(in_ch, out_ch, 3).stride(2).padding(1).bias(config_.backbone_bias));
    {
      torch::NoGradGuard no_grad;
      nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (config_.backbone_bias) conv->bias.zero_();
    }
    backbone_->push_back(conv);
    backbone_->push_back(nn::ReLU());
    in_ch = out_ch;
  }
  register_module("backbone", backbone_);

  const auto channels = config_.feature_channels();
  const auto feature_dim = config_.feature_dim();
  const auto k = config_.num_actions;
  auto make_head = [&](HeadKind kind, std::int64_t outputs) {
    auto head = nn::Sequential();
    if (kind == HeadKind::Mlp) {
      head->push_back(nn::Linear(channels, config_.hidden));
      head->push_back(nn::ReLU());
      head->push_back(nn::Linear(config_.hidden, outputs));
    } else {
      head->push_back(nn::Linear(feature_dim, outputs));
    }
    return head;
  };

  switch (config_.variant) {
    case Variant::Vanilla:
      vanilla_head_ = register_module("vanilla_head", nn::Linear(channels, k));
      break;
    case Variant::Cbm:
      concept_head_ = register_module("concept_head", make_head(config_.concept_head, config_.num_concept_labels));
      cbm_head_ = register_module("cbm_head", nn::Linear(config_.num_concept_labels, k));
      break;
    case Variant::MSenn:
    case Variant::ScSenn:
    case Variant::CSenn:
      concept_head_ = register_module("concept_head", make_head(config_.concept_head, config_.num_concepts));
      if (config_.relevance_head == HeadKind::Constant) {
        constant_relevance_ =
            register_parameter("constant_relevance", torch::randn({config_.num_concepts, k}) * 0.1);
      } else {
        relevance_head_ =
            register_module("relevance_head", make_head(config_.relevance_head, config_.num_concepts * k));
      }
      if (config_.variant == Variant::MSenn) {
        auto disc = nn::Sequential();
        disc->push_back(nn::Linear(config_.num_concepts + feature_dim, config_.disc_hidden));
        disc->push_back(nn::ReLU());
        disc->push_back(nn::Linear(config_.disc_hidden, 1));
        discriminator_ = register_module("discriminator", disc);
      }
      break;
  }
}

torch::Tensor ConceptNetImpl::prepare_input(const torch::Tensor& raw) const {
  auto images = config_.center_inputs ? raw * 2.0 - 1.0 : raw;
  if (!config_.coord_channels) return images;
  const auto b = images.size(0);
  auto opts = images.options().requires_grad(false);
  auto xs = torch::linspace(-1.0, 1.0, config_.width, opts).view({1, 1, 1, config_.width});
  auto ys = torch::linspace(-1.0, 1.0, config_.height, opts).view({1, 1, config_.height, 1});
  auto xplane = xs.expand({b, 1, config_.height, config_.width});
  auto yplane = ys.expand({b, 1, config_.height, config_.width});
  return torch::cat({images, xplane, yplane}, 1);
}

SpatialFeature ConceptNetImpl::encode_intermediate(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != config_.height ||
      images.size(3) != config_.width) {
    std::string shape = "[";
    for (auto s : images.sizes()) shape += std::to_string(s) + ",";
    shape.back() = ']';
    throw ShapeError("encode_intermediate: expected B x 3 x " + std::to_string(config_.height) + " x " +
                     std::to_string(config_.width) + " images, got " + shape);
  }
  return {backbone_->forward(prepare_input(images))};
}

SpatialFeature ConceptNetImpl::encode_intermediate(const ImageSample& sample) {
  std::span<const ImageSample> one(&sample, 1);
  auto param = parameters().front();
  return encode_intermediate(stack_images(one, config_.height, config_.width).to(param.dtype()));
}

torch::Tensor ConceptNetImpl::head_input(HeadKind kind, const SpatialFeature& feature) const {
  const auto& m = feature.map;
  if (m.dim() != 4 || m.size(1) != config_.feature_channels() || m.size(2) != config_.feature_height() ||
      m.size(3) != config_.feature_width())
    throw ShapeError("feature map does not match configured D_h = " + std::to_string(config_.feature_dim()));
  if (kind == HeadKind::Mlp) return m.mean({2, 3});
  return feature.flat();
}

ConceptVector ConceptNetImpl::encode_concepts(const SpatialFeature& feature) {
  if (!concept_head_) throw ConfigError("variant " + to_string(config_.variant) + " has no concept layer");
  return {concept_head_->forward(head_input(config_.concept_head, feature))};
}

RelevanceTensor ConceptNetImpl::relevance(const SpatialFeature& feature) {
  if (!is_senn(config_.variant))
    throw ConfigError("variant " + to_string(config_.variant) + " has no relevance network");
  const auto k = config_.num_actions;
  const auto dc = config_.num_concepts;
  if (config_.relevance_head == HeadKind::Constant) {
    head_input(HeadKind::Linear, feature);  // shape check only
    return {constant_relevance_.unsqueeze(0).expand({feature.batch(), dc, k})};
  }
  auto out = relevance_head_->forward(head_input(config_.relevance_head, feature));
  return {out.view({feature.batch(), dc, k})};
}

torch::Tensor ConceptNetImpl::discriminate(const JointCode& code) {
  if (!discriminator_) throw ConfigError("variant " + to_string(config_.variant) + " has no discriminator");
  const auto expected = config_.num_concepts + config_.feature_dim();
  if (code.z.dim() != 2 || code.z.size(1) != expected)
    throw ShapeError("discriminate: joint code must have length D_c + D_h = " + std::to_string(expected));
  return torch::sigmoid(discriminator_->forward(code.z)).squeeze(1);
}

ForwardOutput ConceptNetImpl::forward_features(const SpatialFeature& feature) {
  ForwardOutput out;
  out.feature = feature;
  switch (config_.variant) {
    case Variant::Vanilla:
      out.logits = vanilla_head_->forward(head_input(HeadKind::Mlp, feature));
      break;
    case Variant::Cbm: {
      // Actions read the concept logits directly.
      auto concept_logits = encode_concepts(feature);
      out.logits = cbm_head_->forward(concept_logits.values);
      out.concepts = concept_logits;
      break;
    }
    default: {
      auto c = encode_concepts(feature);
      auto theta = relevance(feature);
      out.logits = aggregate(theta, c);
      out.concepts = c;
      out.relevance = theta;
    }
  }
  return out;
}

ForwardOutput ConceptNetImpl::forward(const torch::Tensor& images) {
  return forward_features(encode_intermediate(images));
}

std::vector<std::pair<std::string, std::vector<torch::Tensor>>> ConceptNetImpl::parameter_groups() {
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> groups;
  auto add = [&](const std::string& name, const torch::nn::Module* m) {
    if (m != nullptr) groups.emplace_back(name, m->parameters());
  };
  add("backbone", backbone_.get());
  add("concept_head", concept_head_ ? concept_head_.get() : nullptr);
  if (relevance_head_) add("relevance_head", relevance_head_.get());
  if (constant_relevance_.defined()) groups.emplace_back("relevance_head", std::vector{constant_relevance_});
  add("discriminator", discriminator_ ? discriminator_.get() : nullptr);
  add("vanilla_head", vanilla_head_ ? vanilla_head_.get() : nullptr);
  add("cbm_head", cbm_head_ ? cbm_head_.get() : nullptr);
  return groups;
}

ConceptNet clone_model(ConceptNet& model) {
  ConceptNet copy(model->config());
  copy->to(model->parameters().front().scalar_type());
  torch::NoGradGuard guard;
  auto src = model->named_parameters();
  for (auto& item : copy->named_parameters()) item.value().copy_(*src.find(item.key()));
  return copy;
}

std::string config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["variant"] = to_string(c.variant);
  j["height"] = c.height;
  j["width"] = c.width;
  j["coord_channels"] = c.coord_channels;
  j["center_inputs"] = c.center_inputs;
  j["backbone_channels"] = c.backbone_channels;
  j["backbone_bias"] = c.backbone_bias;
  j["hidden"] = c.hidden;
  j["num_concepts"] = c.num_concepts;
  j["num_actions"] = c.num_actions;
  j["num_concept_labels"] = c.num_concept_labels;
  j["disc_hidden"] = c.disc_hidden;
  j["concept_head"] = to_string(c.concept_head);
  j["relevance_head"] = to_string(c.relevance_head);
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model manifest is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.coord_channels = j.at("coord_channels").get<bool>();
    c.center_inputs = j.value("center_inputs", false);
    c.backbone_channels = j.at("backbone_channels").get<std::vector<std::int64_t>>();
    c.backbone_bias = j.at("backbone_bias").get<bool>();
    c.hidden = j.at("hidden").get<std::int64_t>();
    c.num_concepts = j.at("num_concepts").get<std::int64_t>();
    c.num_actions = j.at("num_actions").get<std::int64_t>();
    c.num_concept_labels = j.at("num_concept_labels").get<std::int64_t>();
    c.disc_hidden = j.at("disc_hidden").get<std::int64_t>();
    c.concept_head = parse_head_kind(j.at("concept_head").get<std::string>());
    c.relevance_head = parse_head_kind(j.at("relevance_head").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model manifest: ") + e.what());
  }
  return c;
}

void save_checkpoint(ConceptNet& model, const std::string& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& item : model->named_parameters()) {
    archive.write(archive_key(item.key()), item.value().detach().to(torch::kFloat32).contiguous());
  }
  const auto manifest = config_to_json(model->config());
  auto bytes = torch::empty({static_cast<std::int64_t>(manifest.size())}, torch::kUInt8);
  std::memcpy(bytes.data_ptr<std::uint8_t>(), manifest.data(), manifest.size());
  archive.write(kManifestKey, bytes);
  archive.save_to(path);
}

ConceptNet load_checkpoint(const std::string& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path);
  } catch (const c10::Error& e) {
    throw SchemaError("cannot read checkpoint '" + path + "'");
  }
  torch::Tensor bytes;
  if (!archive.try_read(kManifestKey, bytes)) throw SchemaError("checkpoint '" + path + "' has no manifest");
  std::string manifest(static_cast<std::size_t>(bytes.numel()), '\0');
  std::memcpy(manifest.data(), bytes.data_ptr<std::uint8_t>(), manifest.size());

  ConceptNet model(config_from_json(manifest));
  torch::NoGradGuard guard;
  for (auto& item : model->named_parameters()) {
    torch::Tensor value;
    if (!archive.try_read(archive_key(item.key()), value))
      throw SchemaError("checkpoint '" + path + "' is missing array '" + item.key() + "'");
    if (value.sizes() != item.value().sizes())
      throw SchemaError("checkpoint array '" + item.key() + "' has the wrong shape");
    item.value().copy_(value);
  }
  return model;
}

}  // namespace csenn
