#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "landseg/rng.hpp"
#include "landseg/tensor.hpp"

namespace landseg::nn {

enum class Mode { train, eval };

/// Named view of a learnable tensor and its gradient buffer.
struct ParamRef {
  std::string key;
  Tensor* value;
  Tensor* grad;
};

/// Named view of non-learnable state (e.g. batch-norm running statistics).
struct BufferRef {
  std::string key;
  Tensor* value;
};

// Layers take tensors by value: callers that move their argument hand the
// buffer over (the layer caches or transforms it in place), callers that
// pass an lvalue get a defensive copy. On a machine where these maps are
// tens of megabytes, the moved chains are what keep training memory-bound
// passes to a minimum.

/// 2-d convolution on NCHW tensors, im2col + GEMM. Double precision
/// throughout; batch samples are processed independently so results do not
/// depend on thread count.
class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, int dilation = 1, bool bias = true);

  void init(Rng& rng);
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

  int out_spatial(int in) const;
  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_, dil_;
  bool has_bias_;
  Tensor w_, b_, wg_, bg_;
  Tensor x_cache_;
};

/// 2-d transposed convolution (kernel == stride in this project, giving
/// exact x4 / x2 upsampling with no overlap, but the implementation is
/// general over kernel/stride/pad).
class ConvTranspose2d {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride, int pad = 0, bool bias = true);

  void init(Rng& rng);
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

  int out_spatial(int in) const { return (in - 1) * stride_ + k_ - 2 * pad_; }

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  bool has_bias_;
  Tensor w_, b_, wg_, bg_;  // w is (in, out, k, k)
  Tensor x_cache_;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(Tensor x, Mode mode);
  Tensor backward(Tensor grad_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

 private:
  int ch_;
  double momentum_, eps_;
  Tensor gamma_, beta_, gamma_g_, beta_g_;
  Tensor running_mean_, running_var_;
  Tensor xhat_cache_;
  std::vector<double> invstd_;
  Mode fwd_mode_ = Mode::train;
};

/// Group normalization: statistics per (sample, channel group), so the
/// output is independent of batch composition and identical in train and
/// eval mode. Used in the tiny encoder where batch-coupled statistics
/// would leak between the three encoder instances.
class GroupNorm2d {
 public:
  GroupNorm2d(int channels, int groups, double eps = 1e-5);

  Tensor forward(Tensor x, Mode mode);
  Tensor backward(Tensor grad_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

 private:
  int ch_, groups_;
  double eps_;
  Tensor gamma_, beta_, gamma_g_, beta_g_;
  Tensor xhat_cache_;
  std::vector<double> invstd_;  // per (n, group)
};

class Relu {
 public:
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(Tensor grad_out);

 private:
  std::vector<std::uint8_t> mask_;
};

class Sigmoid {
 public:
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(Tensor grad_out);

 private:
  Tensor y_cache_;
};

/// Inverted dropout; identity in eval mode. The keep mask is a stateless
/// hash of (stream, draw index), deterministic and thread-count
/// independent.
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  void seed(std::uint64_t s) {
    stream_ = s;
    draw_ = 0;
  }
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(Tensor grad_out);

 private:
  double rate_;
  std::uint64_t stream_ = 0;
  std::uint64_t draw_ = 0;
  std::vector<std::uint8_t> keep_;
  bool active_ = false;
};

/// Squeeze-and-excitation channel gate: global average pool, two fully
/// connected layers, sigmoid, channel-wise rescale. Gate values are in
/// (0,1). With identity_gate set the gate is bypassed exactly (diagnostic
/// hook used by tests and the fusion-free ablation).
class SeGate {
 public:
  SeGate(int channels, int reduction);

  void init(Rng& rng);
  Tensor forward(Tensor x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers);

  void set_identity_gate(bool v) { identity_gate_ = v; }
  const Tensor& last_gate() const { return gate_; }

 private:
  int ch_, hidden_;
  Tensor w1_, b1_, w2_, b2_;
  Tensor w1g_, b1g_, w2g_, b2g_;
  Tensor x_cache_, pooled_, hidden_act_, gate_;
  bool identity_gate_ = false;
};

/// SGD with momentum and weight decay (decay added to the gradient before
/// the momentum update). With momentum 0 and decay 0 a step is plain
/// gradient descent.
class Sgd {
 public:
  Sgd(std::vector<ParamRef> params, double lr, double momentum, double weight_decay);

  void step();
  void zero_grad();

 private:
  std::vector<ParamRef> params_;
  std::vector<Tensor> velocity_;
  double lr_, momentum_, weight_decay_;
};

}  // namespace landseg::nn
