#include "landseg/encoder.hpp"

#include <cmath>

namespace landseg {

using nn::BatchNorm2d;
using nn::BufferRef;
using nn::Conv2d;
using nn::GroupNorm2d;
using nn::Mode;
using nn::ParamRef;
using nn::Relu;
using nn::SeGate;

void validate(const EncoderConfig& c) {
  check(c.channels >= 8, "EncoderConfig: channels must be >= 8");
  check(!c.dilation_rates.empty(), "EncoderConfig: dilation_rates must be non-empty");
  for (int r : c.dilation_rates) check(r >= 1, "EncoderConfig: dilation rates must be >= 1");
  check(c.se_reduction >= 1, "EncoderConfig: se_reduction must be >= 1");
}

namespace {

Conv2d make_branch_conv(int in_ch, int out_ch, int rate, bool bias) {
  if (rate == 1) return Conv2d(in_ch, out_ch, 1, 1, 0, 1, bias);
  return Conv2d(in_ch, out_ch, 3, 1, rate, rate, bias);
}

// Four channels per group, adjusted down until it divides.
int norm_groups(int channels) {
  int groups = std::max(1, channels / 4);
  while (channels % groups != 0) --groups;
  return groups;
}

// Residual unit: conv-bn-relu-conv-bn plus (projected) skip, then relu.
struct ResidualBlock {
  Conv2d conv1;
  BatchNorm2d bn1;
  Relu relu1;
  Conv2d conv2;
  BatchNorm2d bn2;
  bool project;
  Conv2d skip_conv;
  BatchNorm2d skip_bn;
  Relu relu_out;
  Tensor skip_cache_;

  ResidualBlock(int in_ch, int out_ch, int stride, int dilation)
      : conv1(in_ch, out_ch, 3, stride, dilation, dilation, /*bias=*/false),
        bn1(out_ch),
        conv2(out_ch, out_ch, 3, 1, dilation, dilation, /*bias=*/false),
        bn2(out_ch),
        project(in_ch != out_ch || stride != 1),
        skip_conv(in_ch, out_ch, 1, stride, 0, 1, /*bias=*/false),
        skip_bn(out_ch) {}

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (project) skip_conv.init(rng);
  }

  Tensor forward(Tensor x, Mode mode) {
    Tensor main = relu1.forward(bn1.forward(conv1.forward(x, mode), mode), mode);
    main = bn2.forward(conv2.forward(std::move(main), mode), mode);
    Tensor skip = project ? skip_bn.forward(skip_conv.forward(std::move(x), mode), mode) : std::move(x);
    add_inplace(main, skip);
    return relu_out.forward(std::move(main), mode);
  }

  Tensor backward(const Tensor& grad_out) {
    Tensor g = relu_out.backward(grad_out);
    Tensor gx = conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(g)))));
    if (project)
      add_inplace(gx, skip_conv.backward(skip_bn.backward(std::move(g))));
    else
      add_inplace(gx, g);
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
    conv1.collect(prefix + ".conv1", params, buffers);
    bn1.collect(prefix + ".bn1", params, buffers);
    conv2.collect(prefix + ".conv2", params, buffers);
    bn2.collect(prefix + ".bn2", params, buffers);
    if (project) {
      skip_conv.collect(prefix + ".skip.conv", params, buffers);
      skip_bn.collect(prefix + ".skip.bn", params, buffers);
    }
  }
};

}  // namespace

struct EncoderNet::Impl {
  EncoderConfig cfg;

  // tiny variant
  std::unique_ptr<Conv2d> t_c1, t_c2, t_c3;
  std::unique_ptr<GroupNorm2d> t_n1, t_n2, t_n3, t_n4;
  Relu t_r1, t_r2, t_r3, t_r4;
  std::vector<Conv2d> t_branches;

  // full variant
  std::unique_ptr<Conv2d> stem;
  std::unique_ptr<BatchNorm2d> stem_bn;
  Relu stem_relu;
  std::vector<ResidualBlock> blocks;
  std::vector<Conv2d> aspp_branches;
  std::unique_ptr<Conv2d> aspp_proj;
  std::unique_ptr<BatchNorm2d> aspp_bn;
  Relu aspp_relu;

  std::unique_ptr<SeGate> se;

  bool record_taps = false;
  std::map<std::string, Tensor> tap_acts;
  std::map<std::string, Tensor> tap_grads;

  explicit Impl(const EncoderConfig& c, std::uint64_t seed) : cfg(c) {
    Rng rng(seed);
    if (cfg.variant == EncoderConfig::Variant::tiny) {
      const int c1 = std::max(2, cfg.channels / 4);
      const int c2 = std::max(4, cfg.channels / 2);
      t_c1 = std::make_unique<Conv2d>(3, c1, 3, 2, 1, 1, /*bias=*/false);
      t_c2 = std::make_unique<Conv2d>(c1, c2, 3, 2, 1, 1, /*bias=*/false);
      t_c3 = std::make_unique<Conv2d>(c2, cfg.channels, 3, 2, 1, 1, /*bias=*/false);
      t_n1 = std::make_unique<GroupNorm2d>(c1, norm_groups(c1));
      t_n2 = std::make_unique<GroupNorm2d>(c2, norm_groups(c2));
      t_n3 = std::make_unique<GroupNorm2d>(cfg.channels, norm_groups(cfg.channels));
      t_n4 = std::make_unique<GroupNorm2d>(cfg.channels, norm_groups(cfg.channels));
      t_c1->init(rng);
      t_c2->init(rng);
      t_c3->init(rng);
      for (int r : cfg.dilation_rates) {
        t_branches.push_back(make_branch_conv(cfg.channels, cfg.channels, r, /*bias=*/false));
        t_branches.back().init(rng);
      }
    } else {
      stem = std::make_unique<Conv2d>(3, 32, 3, 2, 1, 1, /*bias=*/false);
      stem_bn = std::make_unique<BatchNorm2d>(32);
      stem->init(rng);
      blocks.emplace_back(32, 64, 2, 1);
      blocks.emplace_back(64, 64, 1, 1);
      blocks.emplace_back(64, 128, 2, 1);
      blocks.emplace_back(128, 128, 1, 1);
      blocks.emplace_back(128, 256, 1, 2);
      blocks.emplace_back(256, 256, 1, 2);
      blocks.emplace_back(256, 256, 1, 4);
      blocks.emplace_back(256, 256, 1, 4);
      for (auto& b : blocks) b.init(rng);

      const int width = std::max(8, cfg.channels / static_cast<int>(cfg.dilation_rates.size()));
      for (int r : cfg.dilation_rates) {
        aspp_branches.push_back(make_branch_conv(256, width, r, /*bias=*/true));
        aspp_branches.back().init(rng);
      }
      aspp_proj = std::make_unique<Conv2d>(width * static_cast<int>(cfg.dilation_rates.size()),
                                           cfg.channels, 1, 1, 0, 1, /*bias=*/false);
      aspp_proj->init(rng);
      aspp_bn = std::make_unique<BatchNorm2d>(cfg.channels);
    }
    se = std::make_unique<SeGate>(cfg.channels, cfg.se_reduction);
    se->init(rng);
  }

  void tap(const char* name, const Tensor& t) {
    if (record_taps) tap_acts[name] = t;
  }
  void tap_grad(const char* name, const Tensor& t) {
    if (record_taps) tap_grads[name] = t;
  }

  // Caches shared between forward and backward for the branch junctions.
  Tensor branch_input_;
  std::vector<Tensor> branch_outputs_;  // full variant (pre-concat)

  Tensor forward(Tensor x, Mode mode) {
    check(x.rank() == 4 && x.dim(1) == 3, "EncoderNet: input must be (N,3,H,W)");
    check(x.dim(2) % 8 == 0 && x.dim(3) % 8 == 0,
          "EncoderNet: spatial dimensions must be divisible by 8");
    Tensor y;
    if (cfg.variant == EncoderConfig::Variant::tiny) {
      y = t_r1.forward(t_n1->forward(t_c1->forward(std::move(x), mode), mode), mode);
      tap("stage1", y);
      y = t_r2.forward(t_n2->forward(t_c2->forward(std::move(y), mode), mode), mode);
      tap("stage2", y);
      y = t_r3.forward(t_n3->forward(t_c3->forward(std::move(y), mode), mode), mode);
      tap("stage3", y);
      branch_input_ = std::move(y);
      Tensor acc;
      for (std::size_t i = 0; i < t_branches.size(); ++i) {
        Tensor b = t_branches[i].forward(branch_input_, mode);
        if (i == 0)
          acc = std::move(b);
        else
          add_inplace(acc, b);
      }
      scale_inplace(acc, 1.0 / static_cast<double>(t_branches.size()));
      y = t_r4.forward(t_n4->forward(std::move(acc), mode), mode);
      tap("aspp", y);
    } else {
      y = stem_relu.forward(stem_bn->forward(stem->forward(std::move(x), mode), mode), mode);
      tap("stage1", y);
      int i = 0;
      for (auto& b : blocks) {
        y = b.forward(std::move(y), mode);
        ++i;
        if (i == 2) tap("stage2", y);
        if (i == 4) tap("stage3", y);
      }
      branch_input_ = std::move(y);
      branch_outputs_.clear();
      for (auto& b : aspp_branches) branch_outputs_.push_back(b.forward(branch_input_, mode));
      // channel concat
      const int N = branch_input_.dim(0), H = branch_outputs_[0].dim(2), W = branch_outputs_[0].dim(3);
      const int width = branch_outputs_[0].dim(1);
      Tensor cat({N, width * static_cast<int>(branch_outputs_.size()), H, W});
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      for (int n = 0; n < N; ++n)
        for (std::size_t bi = 0; bi < branch_outputs_.size(); ++bi)
          for (int c = 0; c < width; ++c) {
            const double* src = branch_outputs_[bi].data() +
                                (static_cast<std::size_t>(n) * width + static_cast<std::size_t>(c)) * plane;
            double* dst = cat.data() +
                          (static_cast<std::size_t>(n) * cat.dim(1) +
                           bi * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)) *
                              plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p];
          }
      y = aspp_relu.forward(aspp_bn->forward(aspp_proj->forward(std::move(cat), mode), mode), mode);
      tap("aspp", y);
    }
    y = se->forward(std::move(y), mode);
    tap("features", y);
    return y;
  }

  Tensor backward(const Tensor& grad_out) {
    Tensor g = se->backward(grad_out);
    tap_grad("features", grad_out);
    if (cfg.variant == EncoderConfig::Variant::tiny) {
      tap_grad("aspp", g);
      g = t_n4->backward(t_r4.backward(std::move(g)));
      scale_inplace(g, 1.0 / static_cast<double>(t_branches.size()));
      Tensor gx(branch_input_.shape());
      for (auto& b : t_branches) add_inplace(gx, b.backward(g));
      tap_grad("stage3", gx);
      gx = t_c3->backward(t_n3->backward(t_r3.backward(std::move(gx))));
      tap_grad("stage2", gx);
      gx = t_c2->backward(t_n2->backward(t_r2.backward(std::move(gx))));
      tap_grad("stage1", gx);
      return t_c1->backward(t_n1->backward(t_r1.backward(std::move(gx))));
    }
    tap_grad("aspp", g);
    g = aspp_proj->backward(aspp_bn->backward(aspp_relu.backward(std::move(g))));
    // split channel concat gradient back to branches
    const int N = g.dim(0), H = g.dim(2), W = g.dim(3);
    const int width = branch_outputs_[0].dim(1);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor gx(branch_input_.shape());
    for (std::size_t bi = 0; bi < aspp_branches.size(); ++bi) {
      Tensor gb({N, width, H, W});
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < width; ++c) {
          const double* src = g.data() +
                              (static_cast<std::size_t>(n) * g.dim(1) + bi * static_cast<std::size_t>(width) +
                               static_cast<std::size_t>(c)) *
                                  plane;
          double* dst = gb.data() +
                        (static_cast<std::size_t>(n) * width + static_cast<std::size_t>(c)) * plane;
          for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p];
        }
      add_inplace(gx, aspp_branches[bi].backward(gb));
    }
    for (std::size_t i = blocks.size(); i > 0; --i) gx = blocks[i - 1].backward(gx);
    return stem->backward(stem_bn->backward(stem_relu.backward(std::move(gx))));
  }

  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
    if (cfg.variant == EncoderConfig::Variant::tiny) {
      t_c1->collect(prefix + ".stage1.conv", params, buffers);
      t_n1->collect(prefix + ".stage1.norm", params, buffers);
      t_c2->collect(prefix + ".stage2.conv", params, buffers);
      t_n2->collect(prefix + ".stage2.norm", params, buffers);
      t_c3->collect(prefix + ".stage3.conv", params, buffers);
      t_n3->collect(prefix + ".stage3.norm", params, buffers);
      for (std::size_t i = 0; i < t_branches.size(); ++i)
        t_branches[i].collect(prefix + ".dilated.branch" + std::to_string(i), params, buffers);
      t_n4->collect(prefix + ".dilated.norm", params, buffers);
    } else {
      stem->collect(prefix + ".stem.conv", params, buffers);
      stem_bn->collect(prefix + ".stem.bn", params, buffers);
      for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), params, buffers);
      for (std::size_t i = 0; i < aspp_branches.size(); ++i)
        aspp_branches[i].collect(prefix + ".aspp.branch" + std::to_string(i), params, buffers);
      aspp_proj->collect(prefix + ".aspp.proj", params, buffers);
      aspp_bn->collect(prefix + ".aspp.bn", params, buffers);
    }
    se->collect(prefix + ".se", params, buffers);
  }
};

EncoderNet::EncoderNet(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  validate(config);
  impl_ = std::make_unique<Impl>(config, seed);
}

EncoderNet::~EncoderNet() = default;
EncoderNet::EncoderNet(EncoderNet&&) noexcept = default;
EncoderNet& EncoderNet::operator=(EncoderNet&&) noexcept = default;

Tensor EncoderNet::forward(Tensor x, Mode mode) { return impl_->forward(std::move(x), mode); }
Tensor EncoderNet::backward(const Tensor& grad_out) { return impl_->backward(grad_out); }

FeatureMap EncoderNet::encode(const Tensor& image, const std::string& source_id,
                              FeatureMap::Branch branch) {
  check(image.rank() == 3 && image.dim(0) == 3, "encode: image must be (3,H,W)");
  Tensor batched = Tensor::uninit({1, 3, image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), batched.data());
  Tensor out = impl_->forward(std::move(batched), Mode::eval);
  FeatureMap fm;
  fm.values = Tensor({out.dim(1), out.dim(2), out.dim(3)});
  std::copy(out.data(), out.data() + out.size(), fm.values.data());
  fm.source_id = source_id;
  fm.branch = branch;
  return fm;
}

void EncoderNet::collect(const std::string& prefix, std::vector<ParamRef>& params,
                         std::vector<BufferRef>& buffers) {
  impl_->collect(prefix, params, buffers);
}

void EncoderNet::set_identity_gate(bool v) { impl_->se->set_identity_gate(v); }

void EncoderNet::set_record_taps(bool v) {
  impl_->record_taps = v;
  if (!v) {
    impl_->tap_acts.clear();
    impl_->tap_grads.clear();
  }
}

const std::map<std::string, Tensor>& EncoderNet::tap_activations() const { return impl_->tap_acts; }
const std::map<std::string, Tensor>& EncoderNet::tap_gradients() const { return impl_->tap_grads; }

std::vector<std::string> EncoderNet::tap_names() const {
  return {"stage1", "stage2", "stage3", "aspp", "features"};
}

}  // namespace landseg
