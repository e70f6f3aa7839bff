#include "landseg/nn/layers.hpp"

#include <cmath>

#include <Eigen/Core>

namespace landseg::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// col has one row per (c, ki, kj) and one column per output pixel.
void im2col(const double* x, int C, int H, int W, int k, int stride, int pad, int dil, int out_h,
            int out_w, double* col) {
  const int out_n = out_h * out_w;
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * out_n;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki * dil;
          double* dst = row + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < out_w; ++ow) dst[ow] = 0.0;
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj * dil;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int C, int H, int W, int k, int stride, int pad, int dil,
                int out_h, int out_w, double* x) {
  const int out_n = out_h * out_w;
  for (int c = 0; c < C; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col + (static_cast<std::size_t>(c) * k * k + static_cast<std::size_t>(ki) * k + kj) * out_n;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki * dil;
          if (ih < 0 || ih >= H) continue;
          const double* src = row + static_cast<std::size_t>(oh) * out_w;
          double* dst = xc + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj * dil;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

thread_local std::vector<double> tl_col_ws;

double* col_workspace(std::size_t n) {
  if (tl_col_ws.size() < n) tl_col_ws.resize(n);
  return tl_col_ws.data();
}

// Stateless per-index uniform in [0,1), for parallel deterministic masks.
inline double hash_uniform(std::uint64_t stream, std::uint64_t index) {
  std::uint64_t s = stream + 0x9e3779b97f4a7c15ULL * (index + 1);
  return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, int dilation, bool bias)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(ksize),
      stride_(stride),
      pad_(pad),
      dil_(dilation),
      has_bias_(bias),
      w_({out_ch, in_ch, ksize, ksize}),
      b_({out_ch}),
      wg_({out_ch, in_ch, ksize, ksize}),
      bg_({out_ch}) {}

int Conv2d::out_spatial(int in) const {
  return (in + 2 * pad_ - dil_ * (k_ - 1) - 1) / stride_ + 1;
}

void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_ch_) * k_ * k_;
  const double std = std::sqrt(2.0 / fan_in);
  for (std::size_t i = 0; i < w_.size(); ++i) w_[i] = std * rng.normal();
  b_.zero();
}

Tensor Conv2d::forward(Tensor x, Mode) {
  check(x.rank() == 4 && x.dim(1) == in_ch_, "Conv2d: bad input shape " + x.shape_str());
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = out_spatial(H), ow = out_spatial(W);
  check(oh > 0 && ow > 0, "Conv2d: empty output");

  Tensor y = Tensor::uninit({N, out_ch_, oh, ow});
  const std::size_t x_stride = static_cast<std::size_t>(in_ch_) * H * W;
  const std::size_t y_stride = static_cast<std::size_t>(out_ch_) * oh * ow;
  const int kk = in_ch_ * k_ * k_;
  const int out_n = oh * ow;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * x_stride;
    double* yn = y.data() + static_cast<std::size_t>(n) * y_stride;
    const double* col = xn;
    if (!(k_ == 1 && stride_ == 1 && pad_ == 0)) {
      double* ws = col_workspace(static_cast<std::size_t>(kk) * out_n);
      im2col(xn, in_ch_, H, W, k_, stride_, pad_, dil_, oh, ow, ws);
      col = ws;
    }
    ConstMapMat wm(w_.data(), out_ch_, kk);
    ConstMapMat cm(col, kk, out_n);
    MapMat ym(yn, out_ch_, out_n);
    ym.noalias() = wm * cm;
    if (has_bias_)
      for (int c = 0; c < out_ch_; ++c) ym.row(c).array() += b_[static_cast<std::size_t>(c)];
  }
  x_cache_ = std::move(x);
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = x_cache_;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = out_spatial(H), ow = out_spatial(W);
  check(grad_out.rank() == 4 && grad_out.dim(0) == N && grad_out.dim(1) == out_ch_ &&
            grad_out.dim(2) == oh && grad_out.dim(3) == ow,
        "Conv2d: bad grad shape " + grad_out.shape_str());

  const bool unit_kernel = (k_ == 1 && stride_ == 1 && pad_ == 0);
  Tensor gx = unit_kernel ? Tensor::uninit({N, in_ch_, H, W}) : Tensor({N, in_ch_, H, W});
  const std::size_t x_stride = static_cast<std::size_t>(in_ch_) * H * W;
  const std::size_t y_stride = static_cast<std::size_t>(out_ch_) * oh * ow;
  const int kk = in_ch_ * k_ * k_;
  const int out_n = oh * ow;

  // Per-sample weight/bias partials, reduced in sample order afterwards so
  // the result is independent of the thread schedule.
  std::vector<Tensor> wg_part(static_cast<std::size_t>(N), Tensor::uninit(w_.shape()));
  std::vector<Tensor> bg_part(static_cast<std::size_t>(N), Tensor(b_.shape()));

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * x_stride;
    const double* gn = grad_out.data() + static_cast<std::size_t>(n) * y_stride;
    double* gxn = gx.data() + static_cast<std::size_t>(n) * x_stride;

    ConstMapMat gm(gn, out_ch_, out_n);
    ConstMapMat wm(w_.data(), out_ch_, kk);

    // d/dweight and d/dbias
    {
      const double* col = xn;
      if (!unit_kernel) {
        double* ws = col_workspace(static_cast<std::size_t>(kk) * out_n);
        im2col(xn, in_ch_, H, W, k_, stride_, pad_, dil_, oh, ow, ws);
        col = ws;
      }
      ConstMapMat cm(col, kk, out_n);
      MapMat wgm(wg_part[static_cast<std::size_t>(n)].data(), out_ch_, kk);
      wgm.noalias() = gm * cm.transpose();
      if (has_bias_)
        for (int c = 0; c < out_ch_; ++c) bg_part[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)] = gm.row(c).sum();
    }

    // d/dinput
    if (unit_kernel) {
      MapMat gxm(gxn, in_ch_, out_n);
      gxm.noalias() = wm.transpose() * gm;
    } else {
      double* ws = col_workspace(static_cast<std::size_t>(kk) * out_n);
      MapMat cm(ws, kk, out_n);
      cm.noalias() = wm.transpose() * gm;
      col2im_add(ws, in_ch_, H, W, k_, stride_, pad_, dil_, oh, ow, gxn);
    }
  }

  for (int n = 0; n < N; ++n) {
    add_inplace(wg_, wg_part[static_cast<std::size_t>(n)]);
    if (has_bias_) add_inplace(bg_, bg_part[static_cast<std::size_t>(n)]);
  }
  return gx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
  params.push_back({prefix + ".w", &w_, &wg_});
  if (has_bias_) params.push_back({prefix + ".b", &b_, &bg_});
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(ksize),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      w_({in_ch, out_ch, ksize, ksize}),
      b_({out_ch}),
      wg_({in_ch, out_ch, ksize, ksize}),
      bg_({out_ch}) {}

void ConvTranspose2d::init(Rng& rng) {
  // Each output pixel receives in_ch * (k/stride)^2 taps.
  const double fan_in = static_cast<double>(in_ch_) * k_ * k_ / (stride_ * stride_);
  const double std = std::sqrt(2.0 / fan_in);
  for (std::size_t i = 0; i < w_.size(); ++i) w_[i] = std * rng.normal();
  b_.zero();
}

Tensor ConvTranspose2d::forward(Tensor x, Mode) {
  check(x.rank() == 4 && x.dim(1) == in_ch_, "ConvTranspose2d: bad input shape " + x.shape_str());
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = out_spatial(H), ow = out_spatial(W);

  Tensor y({N, out_ch_, oh, ow});  // zeroed: forward scatters
  const std::size_t x_stride = static_cast<std::size_t>(in_ch_) * H * W;
  const std::size_t y_stride = static_cast<std::size_t>(out_ch_) * oh * ow;
  const int kk = out_ch_ * k_ * k_;
  const int in_n = H * W;

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * x_stride;
    double* yn = y.data() + static_cast<std::size_t>(n) * y_stride;
    // col = W^T x, then scatter back through the (k, stride) geometry.
    double* ws = col_workspace(static_cast<std::size_t>(kk) * in_n);
    ConstMapMat wm(w_.data(), in_ch_, kk);
    ConstMapMat xm(xn, in_ch_, in_n);
    MapMat cm(ws, kk, in_n);
    cm.noalias() = wm.transpose() * xm;
    col2im_add(ws, out_ch_, oh, ow, k_, stride_, pad_, /*dil=*/1, H, W, yn);
    if (has_bias_) {
      MapMat ym(yn, out_ch_, static_cast<Eigen::Index>(oh) * ow);
      for (int c = 0; c < out_ch_; ++c) ym.row(c).array() += b_[static_cast<std::size_t>(c)];
    }
  }
  x_cache_ = std::move(x);
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const Tensor& x = x_cache_;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = out_spatial(H), ow = out_spatial(W);
  check(grad_out.rank() == 4 && grad_out.dim(0) == N && grad_out.dim(1) == out_ch_ &&
            grad_out.dim(2) == oh && grad_out.dim(3) == ow,
        "ConvTranspose2d: bad grad shape " + grad_out.shape_str());

  Tensor gx = Tensor::uninit({N, in_ch_, H, W});
  const std::size_t x_stride = static_cast<std::size_t>(in_ch_) * H * W;
  const std::size_t y_stride = static_cast<std::size_t>(out_ch_) * oh * ow;
  const int kk = out_ch_ * k_ * k_;
  const int in_n = H * W;

  std::vector<Tensor> wg_part(static_cast<std::size_t>(N), Tensor::uninit(w_.shape()));
  std::vector<Tensor> bg_part(static_cast<std::size_t>(N), Tensor(b_.shape()));

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xn = x.data() + static_cast<std::size_t>(n) * x_stride;
    const double* gn = grad_out.data() + static_cast<std::size_t>(n) * y_stride;
    double* gxn = gx.data() + static_cast<std::size_t>(n) * x_stride;

    // im2col over the output gradient mirrors the forward scatter.
    double* ws = col_workspace(static_cast<std::size_t>(kk) * in_n);
    im2col(gn, out_ch_, oh, ow, k_, stride_, pad_, /*dil=*/1, H, W, ws);
    ConstMapMat cm(ws, kk, in_n);
    ConstMapMat wm(w_.data(), in_ch_, kk);
    ConstMapMat xm(xn, in_ch_, in_n);

    MapMat gxm(gxn, in_ch_, in_n);
    gxm.noalias() = wm * cm;

    MapMat wgm(wg_part[static_cast<std::size_t>(n)].data(), in_ch_, kk);
    wgm.noalias() = xm * cm.transpose();

    if (has_bias_) {
      ConstMapMat gm(gn, out_ch_, static_cast<Eigen::Index>(oh) * ow);
      for (int c = 0; c < out_ch_; ++c) bg_part[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)] = gm.row(c).sum();
    }
  }

  for (int n = 0; n < N; ++n) {
    add_inplace(wg_, wg_part[static_cast<std::size_t>(n)]);
    if (has_bias_) add_inplace(bg_, bg_part[static_cast<std::size_t>(n)]);
  }
  return gx;
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                              std::vector<BufferRef>&) {
  params.push_back({prefix + ".w", &w_, &wg_});
  if (has_bias_) params.push_back({prefix + ".b", &b_, &bg_});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : ch_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(Tensor::full({channels}, 1.0)),
      beta_({channels}),
      gamma_g_({channels}),
      beta_g_({channels}),
      running_mean_({channels}),
      running_var_(Tensor::full({channels}, 1.0)) {}

Tensor BatchNorm2d::forward(Tensor x, Mode mode) {
  check(x.rank() == 4 && x.dim(1) == ch_, "BatchNorm2d: bad input shape " + x.shape_str());
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t sample = static_cast<std::size_t>(ch_) * plane;
  const double m = static_cast<double>(N) * static_cast<double>(plane);

  fwd_mode_ = mode;
  invstd_.assign(static_cast<std::size_t>(ch_), 0.0);

  Tensor y = Tensor::uninit(x.shape());

#pragma omp parallel for schedule(static)
  for (int c = 0; c < ch_; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double acc = 0.0, acc2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* p = x.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          acc += p[i];
          acc2 += p[i] * p[i];
        }
      }
      mean = acc / m;
      var = acc2 / m - mean * mean;
      if (var < 0.0) var = 0.0;
      running_mean_[static_cast<std::size_t>(c)] =
          (1.0 - momentum_) * running_mean_[static_cast<std::size_t>(c)] + momentum_ * mean;
      running_var_[static_cast<std::size_t>(c)] =
          (1.0 - momentum_) * running_var_[static_cast<std::size_t>(c)] + momentum_ * var;
    } else {
      mean = running_mean_[static_cast<std::size_t>(c)];
      var = running_var_[static_cast<std::size_t>(c)];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    invstd_[static_cast<std::size_t>(c)] = invstd;
    const double g = gamma_[static_cast<std::size_t>(c)];
    const double b = beta_[static_cast<std::size_t>(c)];
    // one pass: x becomes xhat (kept for backward), y gets the affine map
    for (int n = 0; n < N; ++n) {
      double* p = x.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      double* q = y.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (p[i] - mean) * invstd;
        p[i] = xhat;
        q[i] = g * xhat + b;
      }
    }
  }
  xhat_cache_ = std::move(x);
  return y;
}

Tensor BatchNorm2d::backward(Tensor grad_out) {
  const Tensor& xhat = xhat_cache_;
  check(grad_out.same_shape(xhat), "BatchNorm2d: grad shape mismatch");
  const int N = xhat.dim(0), H = xhat.dim(2), W = xhat.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t sample = static_cast<std::size_t>(ch_) * plane;
  const double m = static_cast<double>(N) * static_cast<double>(plane);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < ch_; ++c) {
    const double invstd = invstd_[static_cast<std::size_t>(c)];
    const double g = gamma_[static_cast<std::size_t>(c)];

    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* go = grad_out.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      const double* xh = xhat.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += go[i];
        sum_gx += go[i] * xh[i];
      }
    }
    gamma_g_[static_cast<std::size_t>(c)] += sum_gx;
    beta_g_[static_cast<std::size_t>(c)] += sum_g;

    for (int n = 0; n < N; ++n) {
      double* go = grad_out.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      const double* xh = xhat.data() + static_cast<std::size_t>(n) * sample + static_cast<std::size_t>(c) * plane;
      if (fwd_mode_ == Mode::train) {
        for (std::size_t i = 0; i < plane; ++i)
          go[i] = g * invstd * (go[i] - sum_g / m - xh[i] * sum_gx / m);
      } else {
        for (std::size_t i = 0; i < plane; ++i) go[i] = g * invstd * go[i];
      }
    }
  }
  return grad_out;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                          std::vector<BufferRef>& buffers) {
  params.push_back({prefix + ".gamma", &gamma_, &gamma_g_});
  params.push_back({prefix + ".beta", &beta_, &beta_g_});
  buffers.push_back({prefix + ".running_mean", &running_mean_});
  buffers.push_back({prefix + ".running_var", &running_var_});
}

// ---------------------------------------------------------------------------
// GroupNorm2d

GroupNorm2d::GroupNorm2d(int channels, int groups, double eps)
    : ch_(channels),
      groups_(groups),
      eps_(eps),
      gamma_(Tensor::full({channels}, 1.0)),
      beta_({channels}),
      gamma_g_({channels}),
      beta_g_({channels}) {
  check(groups >= 1 && channels % groups == 0, "GroupNorm2d: groups must divide channels");
}

Tensor GroupNorm2d::forward(Tensor x, Mode) {
  check(x.rank() == 4 && x.dim(1) == ch_, "GroupNorm2d: bad input shape " + x.shape_str());
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int gch = ch_ / groups_;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t group_elems = static_cast<std::size_t>(gch) * plane;

  invstd_.assign(static_cast<std::size_t>(N) * groups_, 0.0);

  Tensor y = Tensor::uninit(x.shape());
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups_; ++g) {
      double* base = x.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(g) * gch) * plane;
      double acc = 0.0, acc2 = 0.0;
      for (std::size_t i = 0; i < group_elems; ++i) {
        acc += base[i];
        acc2 += base[i] * base[i];
      }
      const double mean = acc / static_cast<double>(group_elems);
      double var = acc2 / static_cast<double>(group_elems) - mean * mean;
      if (var < 0.0) var = 0.0;
      const double invstd = 1.0 / std::sqrt(var + eps_);
      invstd_[static_cast<std::size_t>(n) * groups_ + g] = invstd;
      for (int c = 0; c < gch; ++c) {
        const int ch = g * gch + c;
        const double gm = gamma_[static_cast<std::size_t>(ch)];
        const double bt = beta_[static_cast<std::size_t>(ch)];
        double* p = base + static_cast<std::size_t>(c) * plane;
        double* q = y.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(ch)) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (p[i] - mean) * invstd;
          p[i] = xhat;
          q[i] = gm * xhat + bt;
        }
      }
    }
  xhat_cache_ = std::move(x);
  return y;
}

Tensor GroupNorm2d::backward(Tensor grad_out) {
  const Tensor& xhat = xhat_cache_;
  check(grad_out.same_shape(xhat), "GroupNorm2d: grad shape mismatch");
  const int N = xhat.dim(0), H = xhat.dim(2), W = xhat.dim(3);
  const int gch = ch_ / groups_;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double m = static_cast<double>(gch) * static_cast<double>(plane);

  // per-channel param grads accumulated group-serially for determinism
  std::vector<double> dgamma(static_cast<std::size_t>(ch_), 0.0);
  std::vector<double> dbeta(static_cast<std::size_t>(ch_), 0.0);

  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups_; ++g) {
      const double invstd = invstd_[static_cast<std::size_t>(n) * groups_ + g];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < gch; ++c) {
        const int ch = g * gch + c;
        const double gm = gamma_[static_cast<std::size_t>(ch)];
        const double* go = grad_out.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(ch)) * plane;
        const double* xh = xhat.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(ch)) * plane;
        double dg = 0.0, db = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          dg += go[i] * xh[i];
          db += go[i];
          sum_dxhat += go[i] * gm;
          sum_dxhat_xhat += go[i] * gm * xh[i];
        }
        dgamma[static_cast<std::size_t>(ch)] += dg;
        dbeta[static_cast<std::size_t>(ch)] += db;
      }
      for (int c = 0; c < gch; ++c) {
        const int ch = g * gch + c;
        const double gm = gamma_[static_cast<std::size_t>(ch)];
        double* go = grad_out.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(ch)) * plane;
        const double* xh = xhat.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(ch)) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          go[i] = invstd * (go[i] * gm - sum_dxhat / m - xh[i] * sum_dxhat_xhat / m);
      }
    }
  for (int c = 0; c < ch_; ++c) {
    gamma_g_[static_cast<std::size_t>(c)] += dgamma[static_cast<std::size_t>(c)];
    beta_g_[static_cast<std::size_t>(c)] += dbeta[static_cast<std::size_t>(c)];
  }
  return grad_out;
}

void GroupNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                          std::vector<BufferRef>&) {
  params.push_back({prefix + ".gamma", &gamma_, &gamma_g_});
  params.push_back({prefix + ".beta", &beta_, &beta_g_});
}

// ---------------------------------------------------------------------------
// Activations

Tensor Relu::forward(Tensor x, Mode) {
  mask_.assign(x.size(), 0);
  double* d = x.data();
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    if (d[i] > 0.0)
      mask_[static_cast<std::size_t>(i)] = 1;
    else
      d[i] = 0.0;
  }
  return x;
}

Tensor Relu::backward(Tensor grad_out) {
  check(grad_out.size() == mask_.size(), "Relu: grad size mismatch");
  double* d = grad_out.data();
  const auto n = static_cast<std::int64_t>(grad_out.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    if (!mask_[static_cast<std::size_t>(i)]) d[i] = 0.0;
  return grad_out;
}

Tensor Sigmoid::forward(Tensor x, Mode) {
  double* d = x.data();
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
  y_cache_ = x;
  return x;
}

Tensor Sigmoid::backward(Tensor grad_out) {
  check(grad_out.same_shape(y_cache_), "Sigmoid: grad shape mismatch");
  double* d = grad_out.data();
  const double* y = y_cache_.data();
  const auto n = static_cast<std::int64_t>(grad_out.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) d[i] *= y[i] * (1.0 - y[i]);
  return grad_out;
}

Tensor Dropout::forward(Tensor x, Mode mode) {
  active_ = (mode == Mode::train && rate_ > 0.0);
  if (!active_) return x;
  keep_.assign(x.size(), 1);
  const double scale = 1.0 / (1.0 - rate_);
  double* d = x.data();
  const auto n = static_cast<std::int64_t>(x.size());
  const std::uint64_t base = stream_ + 0x632be59bd9b4e019ULL * ++draw_;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    if (hash_uniform(base, static_cast<std::uint64_t>(i)) < rate_) {
      keep_[static_cast<std::size_t>(i)] = 0;
      d[i] = 0.0;
    } else {
      d[i] *= scale;
    }
  }
  return x;
}

Tensor Dropout::backward(Tensor grad_out) {
  if (!active_) return grad_out;
  check(grad_out.size() == keep_.size(), "Dropout: grad size mismatch");
  const double scale = 1.0 / (1.0 - rate_);
  double* d = grad_out.data();
  const auto n = static_cast<std::int64_t>(grad_out.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) d[i] = keep_[static_cast<std::size_t>(i)] ? d[i] * scale : 0.0;
  return grad_out;
}

// ---------------------------------------------------------------------------
// SeGate

SeGate::SeGate(int channels, int reduction)
    : ch_(channels),
      hidden_(std::max(1, channels / reduction)),
      w1_({hidden_, channels}),
      b1_({hidden_}),
      w2_({channels, hidden_}),
      b2_({channels}),
      w1g_({hidden_, channels}),
      b1g_({hidden_}),
      w2g_({channels, hidden_}),
      b2g_({channels}) {}

void SeGate::init(Rng& rng) {
  const double s1 = std::sqrt(2.0 / ch_);
  for (std::size_t i = 0; i < w1_.size(); ++i) w1_[i] = s1 * rng.normal();
  b1_.zero();
  const double s2 = std::sqrt(1.0 / hidden_);
  for (std::size_t i = 0; i < w2_.size(); ++i) w2_[i] = s2 * rng.normal();
  b2_.zero();
}

Tensor SeGate::forward(Tensor x, Mode) {
  check(x.rank() == 4 && x.dim(1) == ch_, "SeGate: bad input shape " + x.shape_str());
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  if (identity_gate_) {
    x_cache_ = std::move(x);
    return x_cache_;
  }

  pooled_ = Tensor({N, ch_});
  hidden_act_ = Tensor({N, hidden_});
  gate_ = Tensor({N, ch_});

  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < ch_; ++c) {
      const double* p = x.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      pooled_.at(n, c) = acc / static_cast<double>(plane);
    }
    for (int h = 0; h < hidden_; ++h) {
      double acc = b1_[static_cast<std::size_t>(h)];
      for (int c = 0; c < ch_; ++c) acc += w1_.at(h, c) * pooled_.at(n, c);
      hidden_act_.at(n, h) = acc > 0.0 ? acc : 0.0;
    }
    for (int c = 0; c < ch_; ++c) {
      double acc = b2_[static_cast<std::size_t>(c)];
      for (int h = 0; h < hidden_; ++h) acc += w2_.at(c, h) * hidden_act_.at(n, h);
      gate_.at(n, c) = 1.0 / (1.0 + std::exp(-acc));
    }
  }

  Tensor y = Tensor::uninit(x.shape());
#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < ch_; ++c) {
      const double g = gate_.at(n, c);
      const double* p = x.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      double* q = y.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * g;
    }
  x_cache_ = std::move(x);
  return y;
}

Tensor SeGate::backward(const Tensor& grad_out) {
  const Tensor& x = x_cache_;
  check(grad_out.same_shape(x), "SeGate: grad shape mismatch");
  if (identity_gate_) return grad_out;
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  Tensor gx = Tensor::uninit(x.shape());
  Tensor dgate({N, ch_});

#pragma omp parallel for schedule(static) collapse(2)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < ch_; ++c) {
      const double g = gate_.at(n, c);
      const double* go = grad_out.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      const double* p = x.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      double* q = gx.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        q[i] = go[i] * g;
        acc += go[i] * p[i];
      }
      dgate.at(n, c) = acc;
    }

  // MLP backward, sample-sequential for determinism.
  for (int n = 0; n < N; ++n) {
    std::vector<double> dz2(static_cast<std::size_t>(ch_));
    for (int c = 0; c < ch_; ++c) {
      const double g = gate_.at(n, c);
      dz2[static_cast<std::size_t>(c)] = dgate.at(n, c) * g * (1.0 - g);
    }
    std::vector<double> dz1(static_cast<std::size_t>(hidden_), 0.0);
    for (int c = 0; c < ch_; ++c) {
      b2g_[static_cast<std::size_t>(c)] += dz2[static_cast<std::size_t>(c)];
      for (int h = 0; h < hidden_; ++h) {
        w2g_.at(c, h) += dz2[static_cast<std::size_t>(c)] * hidden_act_.at(n, h);
        dz1[static_cast<std::size_t>(h)] += w2_.at(c, h) * dz2[static_cast<std::size_t>(c)];
      }
    }
    for (int h = 0; h < hidden_; ++h)
      if (hidden_act_.at(n, h) <= 0.0) dz1[static_cast<std::size_t>(h)] = 0.0;
    std::vector<double> ds(static_cast<std::size_t>(ch_), 0.0);
    for (int h = 0; h < hidden_; ++h) {
      b1g_[static_cast<std::size_t>(h)] += dz1[static_cast<std::size_t>(h)];
      for (int c = 0; c < ch_; ++c) {
        w1g_.at(h, c) += dz1[static_cast<std::size_t>(h)] * pooled_.at(n, c);
        ds[static_cast<std::size_t>(c)] += w1_.at(h, c) * dz1[static_cast<std::size_t>(h)];
      }
    }
    for (int c = 0; c < ch_; ++c) {
      const double d = ds[static_cast<std::size_t>(c)] / static_cast<double>(plane);
      double* q = gx.data() + (static_cast<std::size_t>(n) * ch_ + static_cast<std::size_t>(c)) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] += d;
    }
  }
  return gx;
}

void SeGate::collect(const std::string& prefix, std::vector<ParamRef>& params, std::vector<BufferRef>&) {
  params.push_back({prefix + ".fc1.w", &w1_, &w1g_});
  params.push_back({prefix + ".fc1.b", &b1_, &b1g_});
  params.push_back({prefix + ".fc2.w", &w2_, &w2g_});
  params.push_back({prefix + ".fc2.b", &b2_, &b2g_});
}

// ---------------------------------------------------------------------------
// Sgd

Sgd::Sgd(std::vector<ParamRef> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.value->shape());
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = *params_[k].value;
    Tensor& g = *params_[k].grad;
    Tensor& v = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g[i] + weight_decay_ * w[i];
      v[i] = momentum_ * v[i] + grad;
      w[i] -= lr_ * v[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.grad->zero();
}

}  // namespace landseg::nn
