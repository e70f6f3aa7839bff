#include "landseg/model.hpp"

#include <nlohmann/json.hpp>

#include "landseg/checkpoint.hpp"

using json = nlohmann::json;

namespace landseg {

std::string ModelConfig::to_json() const {
  json j;
  j["encoder"]["variant"] = encoder.variant == EncoderConfig::Variant::tiny ? "tiny" : "full";
  j["encoder"]["channels"] = encoder.channels;
  j["encoder"]["dilation_rates"] = encoder.dilation_rates;
  j["encoder"]["se_reduction"] = encoder.se_reduction;
  j["fusion_mode"] = fusion_mode == FusionMode::add ? "add" : "concat_weight";
  j["fusion_enabled"] = fusion_enabled;
  j["dropout_rate"] = dropout_rate;
  j["ema_lambda"] = ema_lambda;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  const auto& e = j.at("encoder");
  const auto variant = e.at("variant").get<std::string>();
  check(variant == "tiny" || variant == "full", "ModelConfig: unknown encoder variant " + variant);
  c.encoder.variant = variant == "tiny" ? EncoderConfig::Variant::tiny : EncoderConfig::Variant::full;
  c.encoder.channels = e.at("channels").get<int>();
  c.encoder.dilation_rates = e.at("dilation_rates").get<std::vector<int>>();
  c.encoder.se_reduction = e.at("se_reduction").get<int>();
  const auto fm = j.at("fusion_mode").get<std::string>();
  check(fm == "add" || fm == "concat_weight", "ModelConfig: unknown fusion mode " + fm);
  c.fusion_mode = fm == "add" ? FusionMode::add : FusionMode::concat_weight;
  c.fusion_enabled = j.at("fusion_enabled").get<bool>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.ema_lambda = j.at("ema_lambda").get<double>();
  return c;
}

SegModel::SegModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      seg_encoder_(config.encoder, Rng(seed).fork(1).next_u64()),
      ts_(config.encoder, config.ema_lambda, Rng(seed).fork(2).next_u64()),
      decoder_({config.encoder.channels, config.dropout_rate}, Rng(seed).fork(3).next_u64()),
      fusion_(config.fusion_mode, config.encoder.channels, Rng(seed).fork(4).next_u64()) {}

std::vector<Prediction> SegModel::predict_batch(const std::vector<const Sample*>& samples) {
  check(!samples.empty(), "predict_batch: empty batch");
  const int N = static_cast<int>(samples.size());
  const int H = samples[0]->height();
  const int W = samples[0]->width();
  Tensor batch = Tensor::uninit({N, 3, H, W});
  for (int n = 0; n < N; ++n) {
    const Sample& s = *samples[static_cast<std::size_t>(n)];
    check(s.height() == H && s.width() == W, "predict_batch: mixed sample sizes");
    std::copy(s.image.data(), s.image.data() + s.image.size(),
              batch.data() + static_cast<std::size_t>(n) * s.image.size());
  }

  Tensor features = seg_encoder_.forward(batch, nn::Mode::eval);
  if (config_.fusion_enabled) {
    Tensor enhanced = ts_.teacher().forward(std::move(batch), nn::Mode::eval);
    features = fusion_.forward(std::move(features), enhanced, nn::Mode::eval);
  }
  Tensor probs = decoder_.forward(std::move(features), nn::Mode::eval);  // (N,1,H,W)

  std::vector<Prediction> out(static_cast<std::size_t>(N));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    Prediction& p = out[static_cast<std::size_t>(n)];
    p.probabilities = Tensor::uninit({H, W});
    p.mask = BinaryMask(H, W);
    const double* src = probs.data() + static_cast<std::size_t>(n) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      p.probabilities[i] = src[i];
      p.mask.v[i] = src[i] >= 0.5 ? 1 : 0;  // tie goes to landslide
    }
  }
  return out;
}

Prediction SegModel::predict(const Sample& sample) {
  return std::move(predict_batch({&sample}).front());
}

std::vector<nn::ParamRef> SegModel::trainable_params() {
  std::vector<nn::ParamRef> params;
  std::vector<nn::BufferRef> buffers;
  seg_encoder_.collect("seg", params, buffers);
  ts_.student().collect("student", params, buffers);
  decoder_.collect("decoder", params, buffers);
  fusion_.collect("fusion", params, buffers);
  return params;
}

void SegModel::save(const std::string& path, const std::map<std::string, std::string>& extra_blobs) {
  Checkpoint ckpt;
  auto dump = [&](const char* prefix, auto& net) {
    std::vector<nn::ParamRef> params;
    std::vector<nn::BufferRef> buffers;
    net.collect(prefix, params, buffers);
    for (const auto& p : params) ckpt.tensors[p.key] = *p.value;
    for (const auto& b : buffers) ckpt.tensors[b.key] = *b.value;
  };
  dump("seg", seg_encoder_);
  dump("student", ts_.student());
  dump("teacher", ts_.teacher());
  dump("decoder", decoder_);
  dump("fusion", fusion_);
  ckpt.blobs["model_config"] = config_.to_json();
  for (const auto& [k, v] : extra_blobs) ckpt.blobs[k] = v;
  save_checkpoint(path, ckpt);
}

SegModel SegModel::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const auto it = ckpt.blobs.find("model_config");
  if (it == ckpt.blobs.end()) throw data_error("checkpoint has no model_config blob: " + path);
  SegModel model(ModelConfig::from_json(it->second), /*seed=*/0);

  auto restore = [&](const char* prefix, auto& net) {
    std::vector<nn::ParamRef> params;
    std::vector<nn::BufferRef> buffers;
    net.collect(prefix, params, buffers);
    auto assign = [&](const std::string& key, Tensor* dst) {
      const auto t = ckpt.tensors.find(key);
      if (t == ckpt.tensors.end()) throw data_error("checkpoint missing tensor " + key);
      check(t->second.shape() == dst->shape(), "checkpoint shape mismatch for " + key);
      *dst = t->second;
    };
    for (const auto& p : params) assign(p.key, p.value);
    for (const auto& b : buffers) assign(b.key, b.value);
  };
  restore("seg", model.seg_encoder_);
  restore("student", model.ts_.student());
  restore("teacher", model.ts_.teacher());
  restore("decoder", model.decoder_);
  restore("fusion", model.fusion_);
  return model;
}

std::vector<std::string> SegModel::tap_names() {
  std::vector<std::string> names;
  names.push_back("fused");
  for (const auto& n : seg_encoder_.tap_names()) names.push_back("seg." + n);
  for (const auto& n : decoder_.tap_names()) names.push_back("decoder." + n);
  return names;
}

}  // namespace landseg
