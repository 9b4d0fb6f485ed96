#pragma once

#include <cmath>
#include <json.hpp>
#include <string>

#include "ridgegen/autodiff.hpp"
#include "ridgegen/nn.hpp"
#include "ridgegen/sparse_map.hpp"
#include "ridgegen/tensor.hpp"

namespace ridgegen {

// Single-channel image in [0, 1], stored as a 2-D tensor [H, W].
using ImageGrid = Tensor<double>;

// Low-frequency appearance filter: bilinear downsample to a target size, then
// convolve with a normalized Gaussian (reflect padding). sigma is the
// *variance* in the kernel formula exp(-(dx^2+dy^2)/(2*sigma)); the source
// nomenclature is ambiguous and this convention is fixed here.
struct AppearanceFilterConfig {
  int64_t target_h = 0;
  int64_t target_w = 0;
  double sigma = 2.0;
  int64_t kernel_size = 7;

  // Default policy: quarter resolution per side, floor, at least 1 pixel.
  static AppearanceFilterConfig for_source(int64_t h, int64_t w) {
    AppearanceFilterConfig cfg;
    cfg.target_h = std::max<int64_t>(1, h / 4);
    cfg.target_w = std::max<int64_t>(1, w / 4);
    return cfg;
  }

  void validate() const {
    check_config(kernel_size >= 1 && kernel_size % 2 == 1,
                 "appearance filter: kernel_size must be odd and >= 1");
    check_config(sigma > 0, "appearance filter: sigma must be positive");
    check_config(target_h >= 1 && target_w >= 1,
                 "appearance filter: resize target must be at least 1x1");
  }

  nlohmann::json to_json() const {
    return {{"target_h", target_h},
            {"target_w", target_w},
            {"sigma", sigma},
            {"kernel_size", kernel_size}};
  }

  static AppearanceFilterConfig from_json(const nlohmann::json& j) {
    AppearanceFilterConfig cfg;
    cfg.target_h = j.value("target_h", cfg.target_h);
    cfg.target_w = j.value("target_w", cfg.target_w);
    cfg.sigma = j.value("sigma", cfg.sigma);
    cfg.kernel_size = j.value("kernel_size", cfg.kernel_size);
    return cfg;
  }
};

// n x n Gaussian taps normalized to sum to 1 (the residual is folded into the
// center tap so the sum is exact in row-major summation order).
inline Tensor<double> gaussian_kernel(double sigma, int64_t n) {
  check_config(n >= 1 && n % 2 == 1, "gaussian_kernel: n must be odd and >= 1");
  check_config(sigma > 0, "gaussian_kernel: sigma must be positive");
  Tensor<double> k({n, n});
  const int64_t c = n / 2;
  double sum = 0;
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y - c);
      const double dx = static_cast<double>(x - c);
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma));
      k.at2(y, x) = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  double norm = 0;
  for (const auto& v : k) norm += v;
  k.at2(c, c) += 1.0 - norm;
  return k;
}

namespace detail {

inline void check_image(const ImageGrid& img, const char* what) {
  check_usage(img.defined() && img.ndim() == 2, std::string(what) + ": expected a 2-D image");
}

}  // namespace detail

// Filters one image: bilinear resize to the target, then Gaussian blur with
// reflect padding. Uses the same cached linear maps as the differentiable
// batched path, so both paths are numerically identical.
inline ImageGrid blur_downsample(const ImageGrid& img, const AppearanceFilterConfig& cfg) {
  cfg.validate();
  detail::check_image(img, "blur_downsample");
  const int64_t h = img.dim(0), w = img.dim(1);
  check_usage(h >= cfg.target_h && w >= cfg.target_w,
              "blur_downsample: image smaller than resize target");
  auto resize = cached_bilinear_resize(1, 1, h, w, cfg.target_h, cfg.target_w);
  ImageGrid small = apply_weighted(img, *resize, {cfg.target_h, cfg.target_w});
  const int64_t n = cfg.kernel_size;
  auto im2col =
      cached_im2col(1, 1, cfg.target_h, cfg.target_w, n, n, 1, n / 2, PadMode::kReflect101);
  Tensor<double> cols =
      apply_gather(small, *im2col, {cfg.target_h * cfg.target_w, n * n});
  Tensor<double> kern = gaussian_kernel(cfg.sigma, n);
  ImageGrid out({cfg.target_h, cfg.target_w});
  for (int64_t i = 0; i < out.numel(); ++i) {
    double acc = 0;
    for (int64_t t = 0; t < n * n; ++t) acc += cols[i * n * n + t] * kern[t];
    out[i] = acc;
  }
  return out;
}

// Mean squared error between the filtered versions of two equally sized
// images. Symmetric exactly; zero when the filtered versions coincide.
inline double appearance_distance(const ImageGrid& a, const ImageGrid& b,
                                  const AppearanceFilterConfig& cfg) {
  detail::check_image(a, "appearance_distance");
  detail::check_image(b, "appearance_distance");
  check_usage(a.shape() == b.shape(), "appearance_distance: source dimension mismatch");
  ImageGrid fa = blur_downsample(a, cfg);
  ImageGrid fb = blur_downsample(b, cfg);
  double acc = 0;
  for (int64_t i = 0; i < fa.numel(); ++i) {
    const double d = fa[i] - fb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fa.numel());
}

// Differentiable batched filter: [N, 1, H, W] -> [N, target_h * target_w]
// rows of filtered pixels, built from the same cached maps as the scalar path.
template <typename T>
Var<T> filtered_batch(const Var<T>& images, const AppearanceFilterConfig& cfg) {
  cfg.validate();
  check_usage(images.shape().size() == 4 && images.dim(1) == 1,
              "filtered_batch: expected [N, 1, H, W]");
  const int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  check_usage(h >= cfg.target_h && w >= cfg.target_w,
              "filtered_batch: image smaller than resize target");
  auto resize = cached_bilinear_resize(n, 1, h, w, cfg.target_h, cfg.target_w);
  Var<T> small = weighted_op(images, resize, {n, 1, cfg.target_h, cfg.target_w});
  Tensor<T> kern = gaussian_kernel(cfg.sigma, cfg.kernel_size).template cast<T>();
  Var<T> blurred = conv2d(small, constant(kern.reshaped({1, cfg.kernel_size * cfg.kernel_size})),
                          cfg.kernel_size, cfg.kernel_size, 1, cfg.kernel_size / 2,
                          PadMode::kReflect101);
  return reshape(blurred, {n, cfg.target_h * cfg.target_w});
}

}  // namespace ridgegen
