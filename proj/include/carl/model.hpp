// Model assembly and persistence: the full CARL stack (frozen encoder, slot
// transformer, decoder, classifier, disjointedness projection) and the
// mixture-copy baseline, each saved as one self-contained checkpoint.
#pragma once

#include <filesystem>
#include <memory>

#include "carl/config.hpp"
#include "carl/decoders.hpp"
#include "carl/encoder.hpp"
#include "carl/losses.hpp"
#include "carl/mel.hpp"
#include "carl/slots.hpp"

#include "json.hpp"

namespace carl {

// Patch grid of one fixed-length clip at the configured mel resolution; the
// spectrogram is cropped to whole patches so feature and spectrogram targets
// cover the same area.
TargetShape derive_target_shape(const EncoderConfig& enc, int mel_bins);

// FNV-1a over name + value bytes in list order; frozen-audit anchor.
uint64_t parameter_fingerprint(const std::vector<ad::Parameter*>& params);

// Which blocks an optimizer may touch.
struct TrainableSet {
  bool slots = false;
  bool decoder = false;
  bool classifier = false;
  bool projection = false;
};

class CarlModel {
 public:
  CarlModel(const Config& cfg, int n_classes, EncoderModel enc);

  EncoderModel encoder;
  SlotTransformer slots;
  ReconDecoder decoder;
  ClassifierHead classifier;
  ad::Parameter disjoint_proj;  // d_s x proj_dim
  int proj_dim = 0;
  int mel_bins = 0;
  TargetShape shape;
  Mat slot_pe;  // n x d_p positional term added before the slot transformer

  ad::Parameter* projection();  // nullptr when proj_dim == 0

  std::vector<ad::Parameter*> trainable(const TrainableSet& set);
  std::vector<ad::Parameter*> all_parameters();  // everything except the encoder

  void save(const std::filesystem::path& path, const nlohmann::json& extra) const;
  static CarlModel load(const std::filesystem::path& path);

 private:
  // Deserialization path: architecture from a checkpoint header.
  CarlModel(const EncoderConfig& enc_cfg, const SlotConfig& slot_cfg,
            const DecoderConfig& dec_cfg, int n_classes, int proj_dim, int mel_bins,
            uint64_t classifier_seed, uint64_t proj_seed);
};

// Clip embedding copied to every slot, one shared linear head on top.
class BaselineModel {
 public:
  BaselineModel(const Config& cfg, int n_classes, EncoderModel enc);

  EncoderModel encoder;
  int k = 0;
  int mel_bins = 0;
  ClassifierHead head;  // d_p -> n_classes

  void save(const std::filesystem::path& path, const nlohmann::json& extra) const;
  static BaselineModel load(const std::filesystem::path& path);

 private:
  BaselineModel(const EncoderConfig& enc_cfg, int k, int n_classes, int mel_bins,
                uint64_t head_seed);
};

// Checkpoint dispatch on the header's "model" field.
struct LoadedModel {
  std::unique_ptr<CarlModel> carl;
  std::unique_ptr<BaselineModel> baseline;
  nlohmann::json header;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace carl
