#include "landseg/fusion_decoder.hpp"

namespace landseg {

using nn::Mode;

Fusion::Fusion(FusionMode mode, int channels, std::uint64_t seed) : mode_(mode), channels_(channels) {
  if (mode_ == FusionMode::concat_weight) {
    proj_ = std::make_unique<nn::Conv2d>(2 * channels, channels, 1, 1, 0);
    Rng rng(seed);
    proj_->init(rng);
  }
}

nn::Conv2d& Fusion::projection() {
  check(proj_ != nullptr, "Fusion: projection exists only in concat_weight mode");
  return *proj_;
}

Tensor fuse_add(Tensor seg, const Tensor& enh) {
  check(seg.same_shape(enh), "fuse: shape mismatch " + seg.shape_str() + " vs " + enh.shape_str());
  add_inplace(seg, enh);
  return seg;
}

Tensor Fusion::forward(Tensor seg, const Tensor& enh, Mode mode) {
  if (mode_ == FusionMode::add) return fuse_add(std::move(seg), enh);
  check(seg.rank() == 4 && enh.rank() == 4 && seg.dim(0) == enh.dim(0) && seg.dim(2) == enh.dim(2) &&
            seg.dim(3) == enh.dim(3),
        "fuse: spatial dims mismatch");
  check(seg.dim(1) == channels_ && enh.dim(1) == channels_, "fuse: channel count mismatch");
  const int N = seg.dim(0), C = channels_, H = seg.dim(2), W = seg.dim(3);
  Tensor cat = Tensor::uninit({N, 2 * C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    double* dst = cat.data() + static_cast<std::size_t>(n) * 2 * C * plane;
    const double* s = seg.data() + static_cast<std::size_t>(n) * C * plane;
    const double* e = enh.data() + static_cast<std::size_t>(n) * C * plane;
    std::copy(s, s + C * plane, dst);
    std::copy(e, e + C * plane, dst + C * plane);
  }
  return proj_->forward(std::move(cat), mode);
}

std::pair<Tensor, Tensor> Fusion::backward(Tensor grad_out) {
  if (mode_ == FusionMode::add) {
    Tensor second = grad_out;
    return {std::move(grad_out), std::move(second)};
  }
  Tensor gcat = proj_->backward(grad_out);
  const int N = gcat.dim(0), C2 = gcat.dim(1), H = gcat.dim(2), W = gcat.dim(3);
  const int C = C2 / 2;
  Tensor gseg = Tensor::uninit({N, C, H, W});
  Tensor genh = Tensor::uninit({N, C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    const double* src = gcat.data() + static_cast<std::size_t>(n) * C2 * plane;
    std::copy(src, src + C * plane, gseg.data() + static_cast<std::size_t>(n) * C * plane);
    std::copy(src + C * plane, src + 2 * C * plane, genh.data() + static_cast<std::size_t>(n) * C * plane);
  }
  return {std::move(gseg), std::move(genh)};
}

void Fusion::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                     std::vector<nn::BufferRef>& buffers) {
  if (proj_) proj_->collect(prefix + ".proj", params, buffers);
}

// ---------------------------------------------------------------------------

DecoderNet::DecoderNet(const DecoderConfig& config, std::uint64_t seed)
    : cfg_(config),
      up1_(config.in_channels, std::max(4, config.in_channels / 4), 4, 4, 0, /*bias=*/false),
      bn1_(std::max(4, config.in_channels / 4)),
      dropout_(config.dropout_rate),
      up2_(std::max(4, config.in_channels / 4), std::max(2, config.in_channels / 8), 2, 2, 0,
           /*bias=*/false),
      bn2_(std::max(2, config.in_channels / 8)),
      proj_(std::max(2, config.in_channels / 8), 1, 1, 1, 0) {
  check(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0,
        "DecoderConfig: dropout_rate must be in [0,1)");
  Rng rng(seed);
  up1_.init(rng);
  up2_.init(rng);
  // Xavier-scale output projection keeps initial probabilities near 0.5.
  {
    const double s = std::sqrt(1.0 / std::max(2, config.in_channels / 8));
    Tensor& w = proj_.weight();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = s * rng.normal();
    proj_.bias().zero();
  }
  dropout_.seed(rng.next_u64());
}

void DecoderNet::seed_dropout(std::uint64_t seed) { dropout_.seed(seed); }

Tensor DecoderNet::forward(Tensor features, Mode mode) {
  check(features.rank() == 4 && features.dim(1) == cfg_.in_channels,
        "DecoderNet: bad input shape " + features.shape_str());
  Tensor y = relu1_.forward(bn1_.forward(up1_.forward(std::move(features), mode), mode), mode);
  if (record_taps_) tap_acts_["up1"] = y;
  y = dropout_.forward(std::move(y), mode);
  y = relu2_.forward(bn2_.forward(up2_.forward(std::move(y), mode), mode), mode);
  if (record_taps_) tap_acts_["up2"] = y;
  logits_ = proj_.forward(std::move(y), mode);
  return sigmoid_.forward(logits_, mode);
}

Tensor DecoderNet::backward(Tensor grad_out) {
  return backward_from_logits(sigmoid_.backward(std::move(grad_out)));
}

Tensor DecoderNet::backward_from_logits(Tensor grad_logits) {
  Tensor g = proj_.backward(grad_logits);
  if (record_taps_) tap_grads_["up2"] = g;
  g = up2_.backward(bn2_.backward(relu2_.backward(std::move(g))));
  g = dropout_.backward(std::move(g));
  if (record_taps_) tap_grads_["up1"] = g;
  return up1_.backward(bn1_.backward(relu1_.backward(std::move(g))));
}

void DecoderNet::collect(const std::string& prefix, std::vector<nn::ParamRef>& params,
                         std::vector<nn::BufferRef>& buffers) {
  up1_.collect(prefix + ".up1", params, buffers);
  bn1_.collect(prefix + ".bn1", params, buffers);
  up2_.collect(prefix + ".up2", params, buffers);
  bn2_.collect(prefix + ".bn2", params, buffers);
  proj_.collect(prefix + ".proj", params, buffers);
}

void DecoderNet::set_record_taps(bool v) {
  record_taps_ = v;
  if (!v) {
    tap_acts_.clear();
    tap_grads_.clear();
  }
}

}  // namespace landseg
