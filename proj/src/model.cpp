#include "carl/model.hpp"

#include <set>

#include "carl/checkpoint.hpp"
#include "carl/posenc.hpp"
#include "carl/synth.hpp"

namespace carl {

namespace {

// Rebuild weights in place from a checkpoint's tensor map. Every parameter
// must be present with its exact shape; tensors that match no parameter are
// an error too, so silent architecture drift cannot pass a load.
void assign_parameters(const std::vector<ad::Parameter*>& params,
                       const std::map<std::string, Mat>& tensors) {
  std::set<std::string> used;
  for (ad::Parameter* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) {
      throw PipelineError("checkpoint is missing tensor '" + p->name + "'");
    }
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw PipelineError("checkpoint tensor '" + p->name + "' has shape " +
                          std::to_string(it->second.rows()) + "x" +
                          std::to_string(it->second.cols()) + ", expected " +
                          std::to_string(p->value.rows()) + "x" +
                          std::to_string(p->value.cols()));
    }
    p->value = it->second;
    used.insert(p->name);
  }
  for (const auto& [name, mat] : tensors) {
    if (used.count(name) == 0) {
      throw PipelineError("checkpoint has unexpected tensor '" + name + "'");
    }
  }
}

std::map<std::string, Mat> tensor_map(const std::vector<ad::Parameter*>& params) {
  std::map<std::string, Mat> out;
  for (ad::Parameter* p : params) {
    if (!out.emplace(p->name, p->value).second) {
      throw PipelineError("duplicate parameter name '" + p->name + "'");
    }
  }
  return out;
}

nlohmann::json encoder_header(const EncoderConfig& c) {
  return {{"d_p", c.d_p},      {"depth", c.depth},       {"heads", c.heads},
          {"patch_t", c.patch_t}, {"patch_f", c.patch_f}, {"ffn_mult", c.ffn_mult},
          {"seed", c.seed}};
}

EncoderConfig encoder_from_header(const nlohmann::json& j) {
  EncoderConfig c;
  c.d_p = j.at("d_p").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.patch_t = j.at("patch_t").get<int>();
  c.patch_f = j.at("patch_f").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

nlohmann::json slots_header(const SlotConfig& c) {
  return {{"k", c.k},
          {"d_s", c.d_s},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"attention", c.attention == nn::AttentionKind::kInverted ? "inverted" : "standard"},
          {"seed", c.seed}};
}

SlotConfig slots_from_header(const nlohmann::json& j) {
  SlotConfig c;
  c.k = j.at("k").get<int>();
  c.d_s = j.at("d_s").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.attention = j.at("attention").get<std::string>() == "inverted"
                    ? nn::AttentionKind::kInverted
                    : nn::AttentionKind::kStandard;
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

nlohmann::json decoder_header(const DecoderConfig& c) {
  return {{"kind", decoder_kind_name(c.kind)},
          {"target", recon_target_name(c.target)},
          {"alpha", c.use_alpha},
          {"mlp_hidden", c.mlp_hidden},
          {"mlp_layers", c.mlp_layers},
          {"cnn_channels", c.cnn_channels},
          {"ar_layers", c.ar_layers},
          {"ar_heads", c.ar_heads},
          {"seed", c.seed}};
}

DecoderConfig decoder_from_header(const nlohmann::json& j) {
  DecoderConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp") {
    c.kind = DecoderKind::kMlp;
  } else if (kind == "cnn") {
    c.kind = DecoderKind::kCnn;
  } else {
    c.kind = DecoderKind::kTransformer;
  }
  c.target = j.at("target").get<std::string>() == "spectrogram" ? ReconTargetKind::kSpectrogram
                                                                : ReconTargetKind::kFeatures;
  c.use_alpha = j.at("alpha").get<bool>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.mlp_layers = j.at("mlp_layers").get<int>();
  c.cnn_channels = j.at("cnn_channels").get<int>();
  c.ar_layers = j.at("ar_layers").get<int>();
  c.ar_heads = j.at("ar_heads").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

ad::Parameter make_projection(int d_s, int proj_dim, uint64_t seed) {
  ad::Parameter p;
  p.name = "disjoint_proj/W";
  Rng rng(seed);
  p.value = proj_dim > 0 ? nn::glorot(rng, d_s, proj_dim) : Mat(0, 0);
  p.grad = Mat::Zero(p.value.rows(), p.value.cols());
  return p;
}

}  // namespace

TargetShape derive_target_shape(const EncoderConfig& enc, int mel_bins) {
  MelParams mel;
  mel.mel_bins = mel_bins;
  const int frames = mel_frame_count(kSceneSamples, mel);
  const int n_t = frames / enc.patch_t;
  const int n_f = mel_bins / enc.patch_f;
  if (n_t < 1 || n_f < 1) {
    throw ConfigError("patch size exceeds the spectrogram: " + std::to_string(frames) + "x" +
                      std::to_string(mel_bins) + " frames/bins vs patches " +
                      std::to_string(enc.patch_t) + "x" + std::to_string(enc.patch_f));
  }
  TargetShape shape;
  shape.n_t = n_t;
  shape.n_f = n_f;
  shape.d_p = enc.d_p;
  shape.t = n_t * enc.patch_t;
  shape.f = n_f * enc.patch_f;
  return shape;
}

uint64_t parameter_fingerprint(const std::vector<ad::Parameter*>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const ad::Parameter* p : params) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()), h);
  }
  return h;
}

CarlModel::CarlModel(const Config& cfg, int n_classes, EncoderModel enc)
    : encoder(std::move(enc)),
      slots(cfg.slots, encoder.config().d_p),
      decoder(cfg.decoder, cfg.slots.d_s, derive_target_shape(encoder.config(), cfg.mel_bins)),
      classifier(cfg.slots.d_s, n_classes, derive_seed(cfg.seed, "classifier")),
      disjoint_proj(make_projection(cfg.slots.d_s, cfg.loss.proj_dim,
                                    derive_seed(cfg.seed, "disjoint-proj"))),
      proj_dim(cfg.loss.proj_dim),
      mel_bins(cfg.mel_bins),
      shape(derive_target_shape(encoder.config(), cfg.mel_bins)) {
  slot_pe = positional_encoding_2d(shape.n_t, shape.n_f, encoder.config().d_p);
}

CarlModel::CarlModel(const EncoderConfig& enc_cfg, const SlotConfig& slot_cfg,
                     const DecoderConfig& dec_cfg, int n_classes, int proj_dim_in,
                     int mel_bins_in, uint64_t classifier_seed, uint64_t proj_seed)
    : encoder(enc_cfg),
      slots(slot_cfg, enc_cfg.d_p),
      decoder(dec_cfg, slot_cfg.d_s, derive_target_shape(enc_cfg, mel_bins_in)),
      classifier(slot_cfg.d_s, n_classes, classifier_seed),
      disjoint_proj(make_projection(slot_cfg.d_s, proj_dim_in, proj_seed)),
      proj_dim(proj_dim_in),
      mel_bins(mel_bins_in),
      shape(derive_target_shape(enc_cfg, mel_bins_in)) {
  slot_pe = positional_encoding_2d(shape.n_t, shape.n_f, enc_cfg.d_p);
}

ad::Parameter* CarlModel::projection() { return proj_dim > 0 ? &disjoint_proj : nullptr; }

std::vector<ad::Parameter*> CarlModel::trainable(const TrainableSet& set) {
  std::vector<ad::Parameter*> out;
  if (set.slots) {
    for (ad::Parameter* p : slots.parameters()) out.push_back(p);
  }
  if (set.decoder) {
    for (ad::Parameter* p : decoder.parameters()) out.push_back(p);
  }
  if (set.classifier) {
    for (ad::Parameter* p : classifier.parameters()) out.push_back(p);
  }
  if (set.projection && proj_dim > 0) out.push_back(&disjoint_proj);
  return out;
}

std::vector<ad::Parameter*> CarlModel::all_parameters() {
  return trainable({true, true, true, true});
}

void CarlModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  auto* self = const_cast<CarlModel*>(this);
  std::vector<ad::Parameter*> params = self->all_parameters();
  for (ad::Parameter* p : self->encoder.parameters()) params.push_back(p);

  nlohmann::json header = extra;
  header["model"] = "carl";
  header["n_classes"] = classifier.n_classes();
  header["proj_dim"] = proj_dim;
  header["mel_bins"] = mel_bins;
  header["encoder"] = encoder_header(encoder.config());
  header["encoder_fingerprint"] = hex64(encoder.weight_fingerprint());
  header["slots"] = slots_header(slots.config());
  header["decoder"] = decoder_header(decoder.config());
  save_checkpoint(path, header, tensor_map(params));
}

CarlModel CarlModel::load(const std::filesystem::path& path) {
  CheckpointData data = load_checkpoint(path);
  if (data.header.value("model", "") != "carl") {
    throw PipelineError("checkpoint " + path.string() + " is not a carl model");
  }
  CarlModel model(encoder_from_header(data.header.at("encoder")),
                  slots_from_header(data.header.at("slots")),
                  decoder_from_header(data.header.at("decoder")),
                  data.header.at("n_classes").get<int>(),
                  data.header.at("proj_dim").get<int>(),
                  data.header.at("mel_bins").get<int>(), 0, 0);
  std::vector<ad::Parameter*> params = model.all_parameters();
  for (ad::Parameter* p : model.encoder.parameters()) params.push_back(p);
  assign_parameters(params, data.tensors);
  model.encoder.set_frozen(true);
  return model;
}

BaselineModel::BaselineModel(const Config& cfg, int n_classes, EncoderModel enc)
    : encoder(std::move(enc)),
      k(cfg.slots.k),
      mel_bins(cfg.mel_bins),
      head(encoder.config().d_p, n_classes, derive_seed(cfg.seed, "classifier")) {}

BaselineModel::BaselineModel(const EncoderConfig& enc_cfg, int k_in, int n_classes,
                             int mel_bins_in, uint64_t head_seed)
    : encoder(enc_cfg), k(k_in), mel_bins(mel_bins_in),
      head(enc_cfg.d_p, n_classes, head_seed) {}

void BaselineModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  auto* self = const_cast<BaselineModel*>(this);
  std::vector<ad::Parameter*> params = self->head.parameters();
  for (ad::Parameter* p : self->encoder.parameters()) params.push_back(p);

  nlohmann::json header = extra;
  header["model"] = "baseline";
  header["n_classes"] = head.n_classes();
  header["k"] = k;
  header["mel_bins"] = mel_bins;
  header["encoder"] = encoder_header(encoder.config());
  header["encoder_fingerprint"] = hex64(encoder.weight_fingerprint());
  save_checkpoint(path, header, tensor_map(params));
}

BaselineModel BaselineModel::load(const std::filesystem::path& path) {
  CheckpointData data = load_checkpoint(path);
  if (data.header.value("model", "") != "baseline") {
    throw PipelineError("checkpoint " + path.string() + " is not a baseline model");
  }
  BaselineModel model(encoder_from_header(data.header.at("encoder")),
                      data.header.at("k").get<int>(),
                      data.header.at("n_classes").get<int>(),
                      data.header.at("mel_bins").get<int>(), 0);
  std::vector<ad::Parameter*> params = model.head.parameters();
  for (ad::Parameter* p : model.encoder.parameters()) params.push_back(p);
  assign_parameters(params, data.tensors);
  model.encoder.set_frozen(true);
  return model;
}

LoadedModel load_model(const std::filesystem::path& path) {
  CheckpointData data = load_checkpoint(path);
  const std::string kind = data.header.value("model", "");
  LoadedModel out;
  out.header = data.header;
  if (kind == "carl") {
    out.carl = std::make_unique<CarlModel>(CarlModel::load(path));
  } else if (kind == "baseline") {
    out.baseline = std::make_unique<BaselineModel>(BaselineModel::load(path));
  } else {
    throw PipelineError("checkpoint " + path.string() + " has unknown model kind '" + kind + "'");
  }
  return out;
}

}  // namespace carl
