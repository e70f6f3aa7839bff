#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "landseg/distill.hpp"
#include "landseg/encoder.hpp"
#include "landseg/fusion_decoder.hpp"
#include "landseg/sample.hpp"

namespace landseg {

/// Everything needed to rebuild the network stack from a checkpoint.
struct ModelConfig {
  EncoderConfig encoder;
  FusionMode fusion_mode = FusionMode::add;
  bool fusion_enabled = true;
  double dropout_rate = 0.1;
  double ema_lambda = 0.996;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct Prediction {
  BinaryMask mask;
  Tensor probabilities;  // (H, W)
};

/// The full dual-branch stack: segmentation encoder, student/teacher pair,
/// fusion, decoder. Prediction runs the segmentation encoder and the
/// teacher encoder on the same unmasked image, fuses, decodes, and
/// thresholds at 0.5 with ties going to the landslide class.
class SegModel {
 public:
  SegModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  EncoderNet& seg_encoder() { return seg_encoder_; }
  TeacherStudent& teacher_student() { return ts_; }
  EncoderNet& student() { return ts_.student(); }
  EncoderNet& teacher() { return ts_.teacher(); }
  DecoderNet& decoder() { return decoder_; }
  Fusion& fusion() { return fusion_; }
  bool fusion_enabled() const { return config_.fusion_enabled; }

  Prediction predict(const Sample& sample);
  std::vector<Prediction> predict_batch(const std::vector<const Sample*>& samples);

  /// Trainable parameters: segmentation encoder, student, decoder, and the
  /// fusion projection when present. Teacher parameters are deliberately
  /// excluded; they change only through the EMA update.
  std::vector<nn::ParamRef> trainable_params();

  void save(const std::string& path, const std::map<std::string, std::string>& extra_blobs = {});
  static SegModel load(const std::string& path);

  /// Heat-map capture points: "fused", "seg.<name>", "decoder.<name>".
  std::vector<std::string> tap_names();

 private:
  ModelConfig config_;
  EncoderNet seg_encoder_;
  TeacherStudent ts_;
  DecoderNet decoder_;
  Fusion fusion_;
};

}  // namespace landseg
