#pragma once

#include <cmath>
#include <vector>

#include "ridgegen/autodiff.hpp"
#include "ridgegen/rng.hpp"

namespace ridgegen {

// Layers are thin parameter holders; all math is expressed through autodiff
// ops so every forward is differentiable (twice, where needed).

// Fully connected layer with equalized learning-rate scaling: weights are
// kept unit-variance and multiplied by gain/sqrt(fan_in)*lr_mul at use time,
// so the optimizer sees comparable gradient magnitudes across layers.
template <typename T>
struct EqLinear {
  Var<T> weight;  // [out, in]
  Var<T> bias;    // [1, out]
  double w_scale = 1.0;
  double b_scale = 1.0;

  EqLinear() = default;

  EqLinear(int64_t in, int64_t out, Rng& rng, double lr_mul = 1.0, double gain = 1.0) {
    Tensor<T> w = Tensor<T>::randn({out, in}, rng);
    const double init_std = 1.0 / lr_mul;
    for (auto& v : w) v = static_cast<T>(v * init_std);
    weight = param(std::move(w));
    bias = param(Tensor<T>::zeros({1, out}));
    w_scale = gain / std::sqrt(static_cast<double>(in)) * lr_mul;
    b_scale = lr_mul;
  }

  Var<T> forward(const Var<T>& x) const {
    Var<T> y = matmul(x, scale(transpose(weight), w_scale));
    return add(y, tile_rows(scale(bias, b_scale), x.dim(0)));
  }

  void collect(std::vector<Var<T>>& out) const {
    out.push_back(weight);
    out.push_back(bias);
  }
};

// Scales each (sample, channel) plane of an NCHW tensor by s[n, c].
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_usage(s.dim(0) == n && s.dim(1) == c, "channel_scale: scale shape mismatch");
  Var<T> flat = reshape(x, {n * c, h * w});
  Var<T> col = reshape(s, {n * c, 1});
  return reshape(mul(flat, tile_cols(col, h * w)), {n, c, h, w});
}

// Adds a per-channel bias b[1, c] to an NCHW tensor.
template <typename T>
Var<T> channel_bias(const Var<T>& x, const Var<T>& b) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Var<T> per_nc = reshape(tile_rows(b, n), {n * c, 1});  // rows ordered (n, c)
  Var<T> flat = reshape(x, {n * c, h * w});
  return reshape(add(flat, tile_cols(per_nc, h * w)), {n, c, h, w});
}

// Standard convolution as im2col + GEMM. Weight layout: [Cout, Cin*kh*kw]
// with columns ordered (ci, ky, kx) to match the im2col map.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int64_t kh, int64_t kw, int64_t stride,
              int64_t pad, PadMode mode = PadMode::kZero) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int64_t cout = w.dim(0);
  check_usage(w.dim(1) == c * kh * kw, "conv2d: weight/input channel mismatch");
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (ww + 2 * pad - kw) / stride + 1;
  auto im2col = cached_im2col(n, c, h, ww, kh, kw, stride, pad, mode);
  Var<T> cols = gather_op(x, im2col, {n * oh * ow, c * kh * kw});
  Var<T> rows = matmul(cols, transpose(w));  // [N*OH*OW, Cout]
  auto to_nchw = cached_rows_to_nchw(n, cout, oh, ow);
  return gather_op(rows, to_nchw, {n, cout, oh, ow});
}

// Style-modulated 3x3-style convolution. Equivalent to per-sample weight
// modulation/demodulation, computed as: scale input channels by the style,
// run a shared convolution, then rescale outputs by
// 1/sqrt(sum_i s_i^2 * sum_k w_oik^2 + eps), which is the exact per-sample
// demodulation factor because the weight term is separable.
template <typename T>
Var<T> modulated_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& style, int64_t k,
                        bool demodulate = true, double eps = 1e-8) {
  const int64_t n = x.dim(0), cin = x.dim(1);
  const int64_t cout = w.dim(0);
  check_usage(style.dim(0) == n && style.dim(1) == cin, "modulated_conv2d: style shape");
  Var<T> xs = channel_scale(x, style);
  Var<T> y = conv2d(xs, w, k, k, 1, k / 2, PadMode::kZero);
  if (demodulate) {
    Var<T> w2 = reshape(sum_cols(square(reshape(w, {cout * cin, k * k}))), {cout, cin});
    Var<T> d2 = matmul(square(style), transpose(w2));  // [N, Cout]
    Var<T> d = divv(constant(Tensor<T>::full({n, cout}, T(1))),
                    sqrt_v(add_scalar(d2, eps)));
    y = channel_scale(y, d);
  }
  return y;
}

// Normalizes each row to unit rms: x / sqrt(mean(x^2) + eps).
template <typename T>
Var<T> pixel_norm(const Var<T>& x, double eps = 1e-8) {
  const int64_t c = x.dim(1);
  Var<T> ms = scale(sum_cols(square(x)), 1.0 / static_cast<double>(c));
  return divv(x, tile_cols(sqrt_v(add_scalar(ms, eps)), c));
}

// Normalizes each row to unit L2 norm.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, double eps = 1e-12) {
  const int64_t c = x.dim(1);
  Var<T> norm = sqrt_v(add_scalar(sum_cols(square(x)), eps));
  return divv(x, tile_cols(norm, c));
}

// Appends one channel holding the batch-averaged feature standard deviation,
// giving the discriminator a batch-diversity signal.
template <typename T>
Var<T> minibatch_stddev_channel(const Var<T>& x, double eps = 1e-8) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Var<T> xf = reshape(x, {n, c * h * w});
  Var<T> mu = scale(sum_rows(xf), 1.0 / static_cast<double>(n));
  Var<T> diff = sub(xf, tile_rows(mu, n));
  Var<T> var = scale(sum_rows(square(diff)), 1.0 / static_cast<double>(n));
  Var<T> sd = mean_all(sqrt_v(add_scalar(var, eps)));
  Var<T> extra = broadcast_full(sd, Shape{n, 1 * h * w});
  return reshape(concat_cols(xf, extra), {n, c + 1, h, w});
}

// Concatenates along the channel axis.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const int64_t n = a.dim(0), h = a.dim(2), w = a.dim(3);
  check_usage(b.dim(0) == n && b.dim(2) == h && b.dim(3) == w,
              "concat_channels: spatial/batch mismatch");
  Var<T> flat = concat_cols(reshape(a, {n, a.dim(1) * h * w}), reshape(b, {n, b.dim(1) * h * w}));
  return reshape(flat, {n, a.dim(1) + b.dim(1), h, w});
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto m = cached_bilinear_resize(n, c, h, w, 2 * h, 2 * w);
  return weighted_op(x, m, {n, c, 2 * h, 2 * w});
}

template <typename T>
Var<T> downsample2x(const Var<T>& x) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto m = cached_avgpool2(n, c, h, w);
  return weighted_op(x, m, {n, c, h / 2, w / 2});
}

// 2x2/stride-2 max pooling. The argmax pattern is data-dependent, so the
// gather map is built per call; gradients route to the selected elements.
template <typename T>
Var<T> maxpool2(const Var<T>& x) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_usage(h % 2 == 0 && w % 2 == 0, "maxpool2: odd spatial dims");
  const int64_t oh = h / 2, ow = w / 2;
  auto m = std::make_shared<GatherMap>();
  m->in_numel = n * c * h * w;
  m->out_numel = n * c * oh * ow;
  m->idx.resize(m->out_numel);
  const T* src = x.value().data();
  int64_t p = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (b * c + ci) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          int64_t best = base + (2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t idx = base + (2 * oy + dy) * w + (2 * ox + dx);
              if (src[idx] > src[best]) best = idx;
            }
          m->idx[p++] = static_cast<int32_t>(best);
        }
    }
  m->build_adjoint();
  return gather_op(x, m, {n, c, oh, ow});
}

// Depthwise 3x3 convolution as nine shifted copies scaled by per-channel
// taps. Weight layout: [C, 9], tap order (ky, kx), zero padding 1.
template <typename T>
Var<T> depthwise_conv3x3(const Var<T>& x, const Var<T>& w, int64_t stride) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  check_usage(w.dim(0) == c && w.dim(1) == 9, "depthwise_conv3x3: weight shape");
  const int64_t oh = (h - 1) / stride + 1;
  const int64_t ow = (ww - 1) / stride + 1;
  Var<T> acc;
  for (int64_t ky = 0; ky < 3; ++ky)
    for (int64_t kx = 0; kx < 3; ++kx) {
      const int64_t t = ky * 3 + kx;
      auto m = cached_shift(n, c, h, ww, ky - 1, kx - 1, stride);
      Var<T> shifted = gather_op(x, m, {n, c, oh, ow});
      // Per-channel tap broadcast to [N*C, 1] rows ordered (n, c).
      Var<T> tap = reshape(tile_rows(transpose(slice_cols(w, t, 1)), n), {n * c, 1});
      Var<T> term = reshape(mul(reshape(shifted, {n * c, oh * ow}), tile_cols(tap, oh * ow)),
                            {n, c, oh, ow});
      acc = acc.defined() ? add(acc, term) : term;
    }
  return acc;
}

// Global average pooling: NCHW -> [N, C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Var<T> flat = reshape(x, {n * c, h * w});
  return reshape(scale(sum_cols(flat), 1.0 / static_cast<double>(h * w)), {n, c});
}

// Convolution weight with equalized-lr semantics, layout [Cout, Cin*kh*kw].
template <typename T>
struct EqConvWeight {
  Var<T> weight;
  Var<T> bias;  // [1, Cout]
  double w_scale = 1.0;

  EqConvWeight() = default;

  EqConvWeight(int64_t cin, int64_t cout, int64_t k, Rng& rng, double gain = 1.0) {
    weight = param(Tensor<T>::randn({cout, cin * k * k}, rng));
    bias = param(Tensor<T>::zeros({1, cout}));
    w_scale = gain / std::sqrt(static_cast<double>(cin * k * k));
  }

  Var<T> scaled() const { return scale(weight, w_scale); }

  void collect(std::vector<Var<T>>& out) const {
    out.push_back(weight);
    out.push_back(bias);
  }
};

// Multi-layer perceptron with lrelu activations, used to map latent
// subvectors into style space. Inputs are pixel-normalized first.
template <typename T>
struct MappingNet {
  std::vector<EqLinear<T>> layers;

  MappingNet() = default;

  MappingNet(int64_t in_dim, int64_t hidden, int64_t depth, Rng& rng, double lr_mul = 0.01) {
    check_config(depth >= 1, "mapping net: depth must be >= 1");
    for (int64_t i = 0; i < depth; ++i) {
      const int64_t fan_in = i == 0 ? in_dim : hidden;
      layers.emplace_back(fan_in, hidden, rng, lr_mul, std::sqrt(2.0));
    }
  }

  Var<T> forward(const Var<T>& z) const {
    Var<T> h = pixel_norm(z);
    for (const auto& l : layers) h = lrelu(l.forward(h), 0.2);
    return h;
  }

  void collect(std::vector<Var<T>>& out) const {
    for (const auto& l : layers) l.collect(out);
  }
};

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what, int64_t step) {
  if (!t.all_finite())
    throw training_fault("non-finite values in " + what + " at step " + std::to_string(step));
}

}  // namespace ridgegen
