#include "landseg/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include "landseg/png_io.hpp"

namespace landseg {

Tensor compute_cam(const Tensor& activations, const Tensor& gradients) {
  check(activations.rank() == 3, "compute_cam: activations must be (C,H,W)");
  check(activations.same_shape(gradients), "compute_cam: activation/gradient shape mismatch");
  const int C = activations.dim(0), H = activations.dim(1), W = activations.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  Tensor cam({H, W});
  for (int c = 0; c < C; ++c) {
    const double* g = gradients.data() + static_cast<std::size_t>(c) * plane;
    double w = 0.0;
    for (std::size_t i = 0; i < plane; ++i) w += g[i];
    w /= static_cast<double>(plane);
    const double* a = activations.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) cam[i] += w * a[i];
  }
  double mx = 0.0;
  for (std::size_t i = 0; i < cam.size(); ++i) {
    cam[i] = std::max(cam[i], 0.0);
    mx = std::max(mx, cam[i]);
  }
  if (mx > 0.0)
    for (std::size_t i = 0; i < cam.size(); ++i) cam[i] /= mx;
  return cam;
}

Tensor bilinear_resize(const Tensor& map, int out_h, int out_w) {
  check(map.rank() == 2, "bilinear_resize: map must be (H,W)");
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int y0 = static_cast<int>(fy);
      const int x0 = static_cast<int>(fx);
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double dy = fy - y0, dx = fx - x0;
      out.at(r, c) = (1 - dy) * ((1 - dx) * map.at(y0, x0) + dx * map.at(y0, x1)) +
                     dy * ((1 - dx) * map.at(y1, x0) + dx * map.at(y1, x1));
    }
  return out;
}

namespace {

// Piecewise-linear jet-style colormap.
void heat_color(double v, double& r, double& g, double& b) {
  v = std::clamp(v, 0.0, 1.0);
  r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
  g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
  b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
}

Tensor slice_sample(const Tensor& batched) {
  check(batched.rank() == 4 && batched.dim(0) == 1, "gradcam: expected a single-sample batch");
  Tensor out({batched.dim(1), batched.dim(2), batched.dim(3)});
  std::copy(batched.data(), batched.data() + batched.size(), out.data());
  return out;
}

}  // namespace

GradCamResult gradcam(SegModel& model, const Sample& sample, const std::string& layer) {
  const auto valid = model.tap_names();
  if (std::find(valid.begin(), valid.end(), layer) == valid.end()) {
    std::string msg = "gradcam: unknown layer '" + layer + "'; valid layers:";
    for (const auto& n : valid) msg += " " + n;
    throw config_error(msg);
  }

  const int H = sample.height(), W = sample.width();
  Tensor batch = Tensor::uninit({1, 3, H, W});
  std::copy(sample.image.data(), sample.image.data() + sample.image.size(), batch.data());

  model.seg_encoder().set_record_taps(true);
  model.decoder().set_record_taps(true);

  Tensor seg_feats = model.seg_encoder().forward(batch, nn::Mode::eval);
  Tensor fused = seg_feats;
  if (model.fusion_enabled()) {
    Tensor enh = model.teacher().forward(batch, nn::Mode::eval);
    fused = model.fusion().forward(seg_feats, enh, nn::Mode::eval);
  }
  model.decoder().forward(fused, nn::Mode::eval);

  // Landslide score: sum of pre-sigmoid logits over all pixels.
  Tensor d_logits({1, 1, H, W});
  d_logits.fill(1.0);
  Tensor d_fused = model.decoder().backward_from_logits(d_logits);

  Tensor acts, grads;
  if (layer == "fused") {
    acts = slice_sample(fused);
    grads = slice_sample(d_fused);
  } else if (layer.rfind("decoder.", 0) == 0) {
    const std::string name = layer.substr(8);
    acts = slice_sample(model.decoder().tap_activations().at(name));
    grads = slice_sample(model.decoder().tap_gradients().at(name));
  } else {  // seg.<name>
    Tensor d_seg = d_fused;
    if (model.fusion_enabled()) d_seg = model.fusion().backward(d_fused).first;
    model.seg_encoder().backward(d_seg);
    const std::string name = layer.substr(4);
    acts = slice_sample(model.seg_encoder().tap_activations().at(name));
    grads = slice_sample(model.seg_encoder().tap_gradients().at(name));
  }

  model.seg_encoder().set_record_taps(false);
  model.decoder().set_record_taps(false);
  // The backward pass above accumulates parameter gradients; wipe them so
  // a later training step starts clean.
  for (auto& p : model.trainable_params()) p.grad->zero();

  GradCamResult result;
  result.height = H;
  result.width = W;
  result.heat = bilinear_resize(compute_cam(acts, grads), H, W);

  result.overlay.resize(static_cast<std::size_t>(H) * W * 3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = result.heat[i];
    double hr, hg, hb;
    heat_color(v, hr, hg, hb);
    const double a = 0.5 * v;
    const double ir = sample.image.data()[i];
    const double ig = sample.image.data()[plane + i];
    const double ib = sample.image.data()[2 * plane + i];
    result.overlay[3 * i + 0] = static_cast<std::uint8_t>(std::lround(std::clamp((1 - a) * ir + a * hr, 0.0, 1.0) * 255));
    result.overlay[3 * i + 1] = static_cast<std::uint8_t>(std::lround(std::clamp((1 - a) * ig + a * hg, 0.0, 1.0) * 255));
    result.overlay[3 * i + 2] = static_cast<std::uint8_t>(std::lround(std::clamp((1 - a) * ib + a * hb, 0.0, 1.0) * 255));
  }
  return result;
}

void write_gradcam_png(const GradCamResult& result, const std::string& path) {
  png::write_rgb8(path, result.height, result.width, result.overlay);
}

}  // namespace landseg
