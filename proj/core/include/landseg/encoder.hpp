#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "landseg/feature_map.hpp"
#include "landseg/nn/layers.hpp"
#include "landseg/sample.hpp"

namespace landseg {

/// Stride-8 feature extractor configuration. The tiny variant (3 strided
/// conv stages + 1 dilated stage + channel gate) exists so that gradient
/// checks and desk-scale training run in seconds; the full variant is a
/// residual backbone with multi-scale dilated pooling and the same output
/// contract.
struct EncoderConfig {
  enum class Variant { tiny, full };

  Variant variant = Variant::tiny;
  int channels = 32;
  std::vector<int> dilation_rates = {2};  // rate 1 means a 1x1 branch
  int se_reduction = 8;

  static EncoderConfig tiny(int channels = 32) {
    EncoderConfig c;
    c.variant = Variant::tiny;
    c.channels = channels;
    c.dilation_rates = {2};
    c.se_reduction = 8;
    return c;
  }
  static EncoderConfig full(int channels = 256) {
    EncoderConfig c;
    c.variant = Variant::full;
    c.channels = channels;
    c.dilation_rates = {1, 6, 12, 18};
    c.se_reduction = 16;
    return c;
  }
};

void validate(const EncoderConfig& c);

/// One of the three identically shaped encoders (segmentation, student,
/// teacher). Parameters are owned by the instance; the instances never
/// share them.
class EncoderNet {
 public:
  EncoderNet(const EncoderConfig& config, std::uint64_t seed);
  ~EncoderNet();
  EncoderNet(EncoderNet&&) noexcept;
  EncoderNet& operator=(EncoderNet&&) noexcept;

  /// (N,3,H,W) -> (N,C,H/8,W/8). H and W must be divisible by 8.
  Tensor forward(Tensor x, nn::Mode mode);
  /// Gradient w.r.t. the input; accumulates parameter gradients.
  Tensor backward(const Tensor& grad_out);

  /// Spec-level convenience: single image (3,H,W) -> FeatureMap, eval mode.
  FeatureMap encode(const Tensor& image, const std::string& source_id = "",
                    FeatureMap::Branch branch = FeatureMap::Branch::segmentation);

  void collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
               std::vector<nn::BufferRef>& buffers);

  const EncoderConfig& config() const { return config_; }

  /// Diagnostic hook: bypass the channel gate exactly.
  void set_identity_gate(bool v);

  /// Named intermediate activations/gradients for heat-map export.
  void set_record_taps(bool v);
  const std::map<std::string, Tensor>& tap_activations() const;
  const std::map<std::string, Tensor>& tap_gradients() const;
  std::vector<std::string> tap_names() const;

 private:
  struct Impl;
  EncoderConfig config_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace landseg
