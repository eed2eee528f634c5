#pragma once

// Layers with explicit forward/backward passes over NHWC tensors.
//
// Every layer type L provides:
//   L::Context                                   intermediates kept for backward
//   Forward<T, Context> forward(x, mode, rng) const
//   Tensor<T> backward(Context&&, dy)            returns dx, accumulates param grads
//   std::vector<Parameter<T>*> params()
//   static constexpr const char* kind
//
// Forward never mutates the layer. BatchNorm's running statistics are
// advanced separately via update_running_stats(ctx) so inference on a shared
// model stays read-only.

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "mic/rng.hpp"
#include "mic/tensor.hpp"

namespace mic {

enum class LayerMode { Training, Inference };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  double l2 = 0.0;
  Tensor<T> adam_m;
  Tensor<T> adam_v;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, double l2_coeff = 0.0)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor<T>::zeros_like(value)),
        l2(l2_coeff),
        adam_m(Tensor<T>::zeros_like(value)),
        adam_v(Tensor<T>::zeros_like(value)) {}

  void zero_grad() { grad.fill(T{}); }
};

template <typename T, typename Ctx>
struct Forward {
  Tensor<T> output;
  Ctx ctx;
};

/// Glorot-uniform: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(RngStream& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  return rng_uniform<T>(rng, -limit, limit, std::move(shape));
}

inline void require_nhwc(const Shape& s, const char* layer) {
  if (s.size() != 4)
    throw DimensionError(std::string(layer) + " expects an NHWC tensor, got " + shape_str(s));
}

// ---------------------------------------------------------------------------

/// 3x3 convolution, stride 1, same zero padding, with bias.
/// Computed per sample as im2col followed by a matmul.
template <typename T>
class Conv2D {
 public:
  static constexpr const char* kind = "conv2d";
  static constexpr std::size_t kSize = 3;

  struct Context {
    Tensor<T> input;
  };

  Conv2D() = default;
  Conv2D(std::string name, std::size_t cin, std::size_t cout, double l2 = 0.0)
      : kernel_(name + "/kernel", Tensor<T>({kSize, kSize, cin, cout}), l2),
        bias_(name + "/bias", Tensor<T>({cout})) {}

  std::size_t in_channels() const { return kernel_.value.dim(2); }
  std::size_t out_channels() const { return kernel_.value.dim(3); }

  Parameter<T>& kernel() { return kernel_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& kernel() const { return kernel_; }
  const Parameter<T>& bias() const { return bias_; }

  void init(RngStream& rng) {
    const std::size_t cin = in_channels(), cout = out_channels();
    kernel_.value = glorot_uniform<T>(rng, kernel_.value.shape(), kSize * kSize * cin,
                                      kSize * kSize * cout);
    bias_.value.fill(T{});
  }

  std::vector<Parameter<T>*> params() { return {&kernel_, &bias_}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    require_nhwc(x.shape(), kind);
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    if (cin != in_channels())
      throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                           " vs kernel " + shape_str(kernel_.value.shape()));
    const std::size_t cout = out_channels();
    const Tensor<T> k2 = kernel_.value.reshaped({kSize * kSize * cin, cout});
    Tensor<T> y({n, h, w, cout});
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor<T> cols = im2col(x, b);
      const Tensor<T> yb = matmul(cols, k2);
      T* dst = y.ptr() + b * h * w * cout;
      for (std::size_t r = 0; r < h * w; ++r)
        for (std::size_t o = 0; o < cout; ++o) dst[r * cout + o] = yb[r * cout + o] + bias_.value[o];
    }
    return {std::move(y), Context{x}};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    const Tensor<T>& x = ctx.input;
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t cout = out_channels();
    if (dy.shape() != Shape{n, h, w, cout})
      throw DimensionError("conv2d backward: dy shape " + shape_str(dy.shape()));
    const Tensor<T> k2t = transpose(kernel_.value.reshaped({kSize * kSize * cin, cout}));
    Tensor<T> dx(x.shape());
    Tensor<T> dk({kSize * kSize * cin, cout});
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor<T> cols = im2col(x, b);
      const Tensor<T> dyb({h * w, cout},
                          std::vector<T>(dy.ptr() + b * h * w * cout,
                                         dy.ptr() + (b + 1) * h * w * cout));
      const Tensor<T> dkb = matmul(transpose(cols), dyb);
      for (std::size_t i = 0; i < dk.size(); ++i) dk[i] += dkb[i];
      for (std::size_t r = 0; r < h * w; ++r)
        for (std::size_t o = 0; o < cout; ++o) bias_.grad[o] += dyb[r * cout + o];
      col2im_add(matmul(dyb, k2t), dx, b);
    }
    for (std::size_t i = 0; i < dk.size(); ++i) kernel_.grad[i] += dk[i];
    return dx;
  }

 private:
  // Row (i*w + j), column ((di*3 + dj)*cin + c), matching the kernel layout.
  static Tensor<T> im2col(const Tensor<T>& x, std::size_t b) {
    const std::size_t h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t ncol = kSize * kSize * cin;
    Tensor<T> cols({h * w, ncol});
    const T* xb = x.ptr() + b * h * w * cin;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        T* row = cols.ptr() + (i * w + j) * ncol;
        for (std::size_t di = 0; di < kSize; ++di) {
          const auto si = std::ptrdiff_t(i + di) - 1;
          for (std::size_t dj = 0; dj < kSize; ++dj) {
            const auto sj = std::ptrdiff_t(j + dj) - 1;
            T* dst = row + (di * kSize + dj) * cin;
            if (si < 0 || sj < 0 || si >= std::ptrdiff_t(h) || sj >= std::ptrdiff_t(w)) continue;
            const T* src = xb + (std::size_t(si) * w + std::size_t(sj)) * cin;
            std::copy(src, src + cin, dst);
          }
        }
      }
    return cols;
  }

  static void col2im_add(const Tensor<T>& dcols, Tensor<T>& dx, std::size_t b) {
    const std::size_t h = dx.dim(1), w = dx.dim(2), cin = dx.dim(3);
    const std::size_t ncol = kSize * kSize * cin;
    T* dxb = dx.ptr() + b * h * w * cin;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const T* row = dcols.ptr() + (i * w + j) * ncol;
        for (std::size_t di = 0; di < kSize; ++di) {
          const auto si = std::ptrdiff_t(i + di) - 1;
          for (std::size_t dj = 0; dj < kSize; ++dj) {
            const auto sj = std::ptrdiff_t(j + dj) - 1;
            if (si < 0 || sj < 0 || si >= std::ptrdiff_t(h) || sj >= std::ptrdiff_t(w)) continue;
            const T* src = row + (di * kSize + dj) * cin;
            T* dst = dxb + (std::size_t(si) * w + std::size_t(sj)) * cin;
            for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
          }
        }
      }
  }

  Parameter<T> kernel_;
  Parameter<T> bias_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (n, h, w).
template <typename T>
class BatchNorm {
 public:
  static constexpr const char* kind = "batchnorm";
  static constexpr double kDefaultEpsilon = 1e-3;
  static constexpr double kDefaultMomentum = 0.99;

  struct Context {
    bool training = false;
    Tensor<T> x_hat;
    std::vector<double> mean;
    std::vector<double> var;
    std::vector<double> inv_std;
  };

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels, double epsilon = kDefaultEpsilon,
            double momentum = kDefaultMomentum)
      : gamma_(name + "/gamma", Tensor<T>({channels}, T(1))),
        beta_(name + "/beta", Tensor<T>({channels})),
        running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)),
        epsilon_(epsilon),
        momentum_(momentum),
        name_(std::move(name)) {}

  std::size_t channels() const { return gamma_.value.size(); }
  double epsilon() const { return epsilon_; }
  double momentum() const { return momentum_; }
  const std::string& name() const { return name_; }

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }
  bool stats_initialized() const { return stats_initialized_; }
  void set_stats_initialized(bool v) { stats_initialized_ = v; }

  std::vector<Parameter<T>*> params() { return {&gamma_, &beta_}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode mode, RngStream&) const {
    require_nhwc(x.shape(), kind);
    const std::size_t c = x.dim(3);
    if (c != channels())
      throw DimensionError("batchnorm channel mismatch: input " + shape_str(x.shape()) +
                           " vs " + std::to_string(channels()) + " channels");
    const std::size_t count = x.size() / c;
    Tensor<T> y(x.shape());
    Context ctx;
    if (mode == LayerMode::Inference) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t ch = i % c;
        const double inv = 1.0 / std::sqrt(double(running_var_[ch]) + epsilon_);
        y[i] = static_cast<T>(double(gamma_.value[ch]) * (double(x[i]) - running_mean_[ch]) * inv +
                              double(beta_.value[ch]));
      }
      return {std::move(y), std::move(ctx)};
    }
    if (count < 2)
      throw std::invalid_argument("batchnorm training needs at least 2 values per channel, got " +
                                  std::to_string(count));
    ctx.training = true;
    ctx.mean.assign(c, 0.0);
    ctx.var.assign(c, 0.0);
    ctx.inv_std.assign(c, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) ctx.mean[i % c] += double(x[i]);
    for (auto& m : ctx.mean) m /= double(count);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = double(x[i]) - ctx.mean[i % c];
      ctx.var[i % c] += d * d;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      ctx.var[ch] /= double(count);
      ctx.inv_std[ch] = 1.0 / std::sqrt(ctx.var[ch] + epsilon_);
    }
    ctx.x_hat = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t ch = i % c;
      const double xh = (double(x[i]) - ctx.mean[ch]) * ctx.inv_std[ch];
      ctx.x_hat[i] = static_cast<T>(xh);
      y[i] = static_cast<T>(double(gamma_.value[ch]) * xh + double(beta_.value[ch]));
    }
    return {std::move(y), std::move(ctx)};
  }

  /// running = momentum * running + (1 - momentum) * batch. The first
  /// training batch seeds the statistics directly; until then inference uses
  /// mean 0, variance 1.
  void update_running_stats(const Context& ctx) {
    if (!ctx.training) return;
    if (!stats_initialized_) {
      for (std::size_t ch = 0; ch < channels(); ++ch) {
        running_mean_[ch] = static_cast<T>(ctx.mean[ch]);
        running_var_[ch] = static_cast<T>(ctx.var[ch]);
      }
      stats_initialized_ = true;
      return;
    }
    for (std::size_t ch = 0; ch < channels(); ++ch) {
      running_mean_[ch] =
          static_cast<T>(momentum_ * running_mean_[ch] + (1.0 - momentum_) * ctx.mean[ch]);
      running_var_[ch] =
          static_cast<T>(momentum_ * running_var_[ch] + (1.0 - momentum_) * ctx.var[ch]);
    }
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    const std::size_t c = channels();
    Tensor<T> dx(dy.shape());
    if (!ctx.training) {
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const std::size_t ch = i % c;
        dx[i] = static_cast<T>(double(dy[i]) * double(gamma_.value[ch]) /
                               std::sqrt(double(running_var_[ch]) + epsilon_));
      }
      return dx;
    }
    if (dy.shape() != ctx.x_hat.shape())
      throw DimensionError("batchnorm backward: dy shape " + shape_str(dy.shape()));
    const double count = double(dy.size() / c);
    std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      sum_dy[i % c] += double(dy[i]);
      sum_dy_xh[i % c] += double(dy[i]) * double(ctx.x_hat[i]);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      gamma_.grad[ch] += static_cast<T>(sum_dy_xh[ch]);
      beta_.grad[ch] += static_cast<T>(sum_dy[ch]);
    }
    // dx = gamma * inv_std / N * (N dy - sum(dy) - x_hat * sum(dy x_hat))
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const std::size_t ch = i % c;
      const double scale = double(gamma_.value[ch]) * ctx.inv_std[ch] / count;
      dx[i] = static_cast<T>(
          scale * (count * double(dy[i]) - sum_dy[ch] - double(ctx.x_hat[i]) * sum_dy_xh[ch]));
    }
    return dx;
  }

 private:
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  bool stats_initialized_ = false;
  double epsilon_ = kDefaultEpsilon;
  double momentum_ = kDefaultMomentum;
  std::string name_;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
 public:
  static constexpr const char* kind = "relu";
  struct Context {
    Tensor<T> input;
  };

  std::vector<Parameter<T>*> params() { return {}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return {std::move(y), Context{x}};
  }

  // Subgradient at exactly 0 is 0.
  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = ctx.input[i] > T(0) ? dy[i] : T(0);
    return dx;
  }
};

// ---------------------------------------------------------------------------

/// 2x2 max pooling, stride 2, no padding. Odd trailing rows/cols are dropped.
template <typename T>
class MaxPool2D {
 public:
  static constexpr const char* kind = "maxpool";
  struct Context {
    Shape input_shape;
    std::vector<std::size_t> argmax;
  };

  std::vector<Parameter<T>*> params() { return {}; }

  static Shape output_shape(const Shape& in) {
    require_nhwc(in, kind);
    if (in[1] < 2 || in[2] < 2)
      throw DimensionError("maxpool needs spatial size >= 2x2, got " + shape_str(in));
    return {in[0], in[1] / 2, in[2] / 2, in[3]};
  }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    const Shape os = output_shape(x.shape());
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t oh = os[1], ow = os[2];
    Tensor<T> y(os);
    Context ctx{x.shape(), std::vector<std::size_t>(y.size())};
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t ch = 0; ch < c; ++ch) {
            // Row-major scan with strict '>' so ties go to the first element.
            std::size_t best = ((b * h + 2 * i) * w + 2 * j) * c + ch;
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj) {
                const std::size_t idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                if (x[idx] > x[best]) best = idx;
              }
            const std::size_t o = ((b * oh + i) * ow + j) * c + ch;
            y[o] = x[best];
            ctx.argmax[o] = best;
          }
    return {std::move(y), std::move(ctx)};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    Tensor<T> dx(ctx.input_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[ctx.argmax[o]] += dy[o];
    return dx;
  }
};

// ---------------------------------------------------------------------------

/// Inverted dropout: keeps each element with probability 1 - rate and
/// scales survivors by 1 / (1 - rate). Identity in inference mode.
template <typename T>
class Dropout {
 public:
  static constexpr const char* kind = "dropout";
  struct Context {
    bool active = false;
    Tensor<T> mask;  // 0 or 1/(1-rate)
  };

  Dropout() = default;
  explicit Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0))
      throw std::invalid_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }

  double rate() const { return rate_; }
  std::vector<Parameter<T>*> params() { return {}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode mode, RngStream& rng) const {
    if (mode == LayerMode::Inference || rate_ == 0.0) return {x, Context{}};
    Context ctx{true, Tensor<T>(x.shape())};
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool keep = rng.next_double() >= rate_;
      ctx.mask[i] = keep ? scale : T(0);
      y[i] = x[i] * ctx.mask[i];
    }
    return {std::move(y), std::move(ctx)};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    if (!ctx.active) return dy;
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * ctx.mask[i];
    return dx;
  }

 private:
  double rate_ = 0.0;
};

// ---------------------------------------------------------------------------

template <typename T>
class GlobalAvgPool {
 public:
  static constexpr const char* kind = "global_avg_pool";
  struct Context {
    Shape input_shape;
  };

  std::vector<Parameter<T>*> params() { return {}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    require_nhwc(x.shape(), kind);
    return {reduce_mean(x, {1, 2}), Context{x.shape()}};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    const Shape& s = ctx.input_shape;
    const std::size_t hw = s[1] * s[2], c = s[3];
    Tensor<T> dx(s);
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch)
          dx[(b * hw + p) * c + ch] = dy[b * c + ch] / static_cast<T>(hw);
    return dx;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
class Flatten {
 public:
  static constexpr const char* kind = "flatten";
  struct Context {
    Shape input_shape;
  };

  std::vector<Parameter<T>*> params() { return {}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    const std::size_t n = x.dim(0);
    return {x.reshaped({n, x.size() / n}), Context{x.shape()}};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) { return dy.reshaped(ctx.input_shape); }
};

// ---------------------------------------------------------------------------

/// y = x W + b, W of shape [din, dout].
template <typename T>
class Dense {
 public:
  static constexpr const char* kind = "dense";
  struct Context {
    Tensor<T> input;
  };

  Dense() = default;
  Dense(std::string name, std::size_t din, std::size_t dout, double l2 = 0.0)
      : kernel_(name + "/kernel", Tensor<T>({din, dout}), l2),
        bias_(name + "/bias", Tensor<T>({dout})) {}

  std::size_t in_features() const { return kernel_.value.dim(0); }
  std::size_t out_features() const { return kernel_.value.dim(1); }

  Parameter<T>& kernel() { return kernel_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& kernel() const { return kernel_; }
  const Parameter<T>& bias() const { return bias_; }

  void init(RngStream& rng) {
    kernel_.value = glorot_uniform<T>(rng, kernel_.value.shape(), in_features(), out_features());
    bias_.value.fill(T{});
  }

  std::vector<Parameter<T>*> params() { return {&kernel_, &bias_}; }

  Forward<T, Context> forward(const Tensor<T>& x, LayerMode, RngStream&) const {
    if (x.rank() != 2 || x.dim(1) != in_features())
      throw DimensionError("dense input " + shape_str(x.shape()) + " does not match kernel " +
                           shape_str(kernel_.value.shape()));
    Tensor<T> y = matmul(x, kernel_.value);
    const std::size_t dout = out_features();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias_.value[i % dout];
    return {std::move(y), Context{x}};
  }

  Tensor<T> backward(Context&& ctx, const Tensor<T>& dy) {
    const Tensor<T> dw = matmul(transpose(ctx.input), dy);
    for (std::size_t i = 0; i < dw.size(); ++i) kernel_.grad[i] += dw[i];
    const std::size_t dout = out_features();
    for (std::size_t i = 0; i < dy.size(); ++i) bias_.grad[i % dout] += dy[i];
    return matmul(dy, transpose(kernel_.value));
  }

 private:
  Parameter<T> kernel_;
  Parameter<T> bias_;
};

// ---------------------------------------------------------------------------

template <typename T>
using Layer = std::variant<Conv2D<T>, BatchNorm<T>, ReLU<T>, MaxPool2D<T>, Dropout<T>,
                           GlobalAvgPool<T>, Flatten<T>, Dense<T>>;

template <typename T>
using LayerContext =
    std::variant<typename Conv2D<T>::Context, typename BatchNorm<T>::Context,
                 typename ReLU<T>::Context, typename MaxPool2D<T>::Context,
                 typename Dropout<T>::Context, typename GlobalAvgPool<T>::Context,
                 typename Flatten<T>::Context, typename Dense<T>::Context>;

template <typename T>
const char* layer_kind(const Layer<T>& layer) {
  return std::visit([](const auto& l) { return std::decay_t<decltype(l)>::kind; }, layer);
}

// ---------------------------------------------------------------------------
// Output activations. Their backward passes are fused into the losses.

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& z) {
  if (z.rank() != 2) throw DimensionError("softmax expects [n,k], got " + shape_str(z.shape()));
  const std::size_t n = z.dim(0), k = z.dim(1);
  Tensor<T> p(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.ptr() + i * k;
    const T m = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(row[j]) - double(m));
    for (std::size_t j = 0; j < k; ++j)
      p[i * k + j] = static_cast<T>(std::exp(double(row[j]) - double(m)) / sum);
  }
  return p;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& z) {
  Tensor<T> p(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = double(z[i]);
    // Evaluate on the side that cannot overflow.
    p[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  return p;
}

}  // namespace mic
