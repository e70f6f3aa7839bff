#pragma once

#include <string>
#include <vector>

#include "landseg/model.hpp"

namespace landseg {

/// Channel-weighted, ReLU'd activation map: weights are the spatial means
/// of the gradients, the result is max-normalized to [0,1]. All-zero input
/// yields an all-zero map.
Tensor compute_cam(const Tensor& activations, const Tensor& gradients);

/// Bilinear upsample of a (H,W) map.
Tensor bilinear_resize(const Tensor& map, int out_h, int out_w);

struct GradCamResult {
  Tensor heat;                        // (H,W) in [0,1], input resolution
  std::vector<std::uint8_t> overlay;  // RGB8, heat blended over the input
  int height = 0;
  int width = 0;
};

/// Gradients of the landslide score (sum of pre-sigmoid logits) w.r.t. the
/// chosen layer's activations drive the class activation map, which is
/// upsampled to the input resolution and alpha-blended over the image.
/// Unknown layer names raise an error listing the valid taps.
GradCamResult gradcam(SegModel& model, const Sample& sample, const std::string& layer);

void write_gradcam_png(const GradCamResult& result, const std::string& path);

}  // namespace landseg
