#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>

#include "landseg/nn/layers.hpp"
#include "landseg/tensor.hpp"

namespace landseg {

enum class FusionMode { add, concat_weight };

/// Fuses enhancement-branch features into segmentation-branch features.
/// add: exact elementwise sum (the default). concat_weight: channel
/// concatenation followed by a learned 1x1 projection back to C channels.
class Fusion {
 public:
  Fusion(FusionMode mode, int channels, std::uint64_t seed);

  Tensor forward(Tensor seg, const Tensor& enh, nn::Mode mode);
  /// Gradients w.r.t. (seg, enh).
  std::pair<Tensor, Tensor> backward(Tensor grad_out);

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers);

  FusionMode mode() const { return mode_; }
  nn::Conv2d& projection();

 private:
  FusionMode mode_;
  int channels_;
  std::unique_ptr<nn::Conv2d> proj_;  // concat_weight only
};

/// Stateless helper for the default additive fusion.
Tensor fuse_add(Tensor seg, const Tensor& enh);

struct DecoderConfig {
  int in_channels = 32;
  double dropout_rate = 0.1;
  // Two transposed-convolution stages recover the full resolution:
  // x4 then x2, stride 8 total.
};

/// Decoder head: [tconv x4, batch norm, ReLU, dropout] ->
/// [tconv x2, batch norm, ReLU] -> 1x1 projection -> sigmoid.
/// Output is a (N,1,8H,8W) probability map in (0,1).
class DecoderNet {
 public:
  DecoderNet(const DecoderConfig& config, std::uint64_t seed);

  Tensor forward(Tensor features, nn::Mode mode);
  /// Backward from d(loss)/d(probabilities); returns d/d(features).
  Tensor backward(Tensor grad_out);
  /// Backward from d(loss)/d(logits), skipping the sigmoid chain (the
  /// caller has already folded sigmoid' into the gradient).
  Tensor backward_from_logits(Tensor grad_logits);

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers);

  void seed_dropout(std::uint64_t seed);

  /// Named intermediate activations/gradients for heat-map export.
  void set_record_taps(bool v);
  const std::map<std::string, Tensor>& tap_activations() const { return tap_acts_; }
  const std::map<std::string, Tensor>& tap_gradients() const { return tap_grads_; }
  std::vector<std::string> tap_names() const { return {"up1", "up2"}; }

  const Tensor& last_logits() const { return logits_; }

 private:
  DecoderConfig cfg_;
  nn::ConvTranspose2d up1_;
  nn::BatchNorm2d bn1_;
  nn::Relu relu1_;
  nn::Dropout dropout_;
  nn::ConvTranspose2d up2_;
  nn::BatchNorm2d bn2_;
  nn::Relu relu2_;
  nn::Conv2d proj_;
  nn::Sigmoid sigmoid_;
  Tensor logits_;
  bool record_taps_ = false;
  std::map<std::string, Tensor> tap_acts_, tap_grads_;
};

}  // namespace landseg
