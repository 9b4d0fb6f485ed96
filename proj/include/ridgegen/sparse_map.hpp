#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ridgegen/tensor.hpp"

namespace ridgegen {

// Fixed linear image operators (im2col, layout permutes, resampling) are
// represented as precomputed index maps with explicit adjoints. Forward and
// adjoint applications are plain loops with disjoint writes, so they stay
// bitwise deterministic and differentiable to any order once wrapped as
// autodiff primitives.

// out[i] = in[idx[i]], or 0 where idx[i] < 0.
struct GatherMap {
  int64_t in_numel = 0;
  int64_t out_numel = 0;
  std::vector<int32_t> idx;

  // Adjoint as CSR over input elements: input j is read by outputs
  // adj_cols[adj_offsets[j] .. adj_offsets[j+1]).
  std::vector<int64_t> adj_offsets;
  std::vector<int32_t> adj_cols;

  void build_adjoint() {
    adj_offsets.assign(in_numel + 1, 0);
    for (int32_t j : idx)
      if (j >= 0) adj_offsets[j + 1]++;
    for (int64_t j = 0; j < in_numel; ++j) adj_offsets[j + 1] += adj_offsets[j];
    adj_cols.resize(adj_offsets[in_numel]);
    std::vector<int64_t> cursor(adj_offsets.begin(), adj_offsets.end() - 1);
    for (int64_t i = 0; i < out_numel; ++i) {
      const int32_t j = idx[i];
      if (j >= 0) adj_cols[cursor[j]++] = static_cast<int32_t>(i);
    }
  }
};

// out[i] = sum_t weights[t] * in[cols[t]] over taps of row i.
struct WeightedMap {
  int64_t in_numel = 0;
  int64_t out_numel = 0;
  std::vector<int64_t> offsets;  // out_numel + 1
  std::vector<int32_t> cols;
  std::vector<double> weights;

  std::vector<int64_t> adj_offsets;  // in_numel + 1
  std::vector<int32_t> adj_cols;
  std::vector<double> adj_weights;

  void build_adjoint() {
    adj_offsets.assign(in_numel + 1, 0);
    for (int32_t c : cols) adj_offsets[c + 1]++;
    for (int64_t j = 0; j < in_numel; ++j) adj_offsets[j + 1] += adj_offsets[j];
    adj_cols.resize(cols.size());
    adj_weights.resize(cols.size());
    std::vector<int64_t> cursor(adj_offsets.begin(), adj_offsets.end() - 1);
    for (int64_t i = 0; i < out_numel; ++i) {
      for (int64_t t = offsets[i]; t < offsets[i + 1]; ++t) {
        const int64_t p = cursor[cols[t]]++;
        adj_cols[p] = static_cast<int32_t>(i);
        adj_weights[p] = weights[t];
      }
    }
  }
};

template <typename T>
Tensor<T> apply_gather(const Tensor<T>& x, const GatherMap& m, Shape out_shape) {
  check_usage(x.numel() == m.in_numel, "gather: input size mismatch");
  Tensor<T> out(std::move(out_shape));
  const T* src = x.data();
  T* dst = out.data();
  for (int64_t i = 0; i < m.out_numel; ++i) {
    const int32_t j = m.idx[i];
    dst[i] = j >= 0 ? src[j] : T(0);
  }
  return out;
}

template <typename T>
Tensor<T> apply_gather_adjoint(const Tensor<T>& g, const GatherMap& m, Shape in_shape) {
  check_usage(g.numel() == m.out_numel, "gather adjoint: grad size mismatch");
  Tensor<T> out(std::move(in_shape));
  const T* src = g.data();
  T* dst = out.data();
  for (int64_t j = 0; j < m.in_numel; ++j) {
    T acc = T(0);
    for (int64_t t = m.adj_offsets[j]; t < m.adj_offsets[j + 1]; ++t) acc += src[m.adj_cols[t]];
    dst[j] = acc;
  }
  return out;
}

template <typename T>
Tensor<T> apply_weighted(const Tensor<T>& x, const WeightedMap& m, Shape out_shape) {
  check_usage(x.numel() == m.in_numel, "weighted map: input size mismatch");
  Tensor<T> out(std::move(out_shape));
  const T* src = x.data();
  T* dst = out.data();
  for (int64_t i = 0; i < m.out_numel; ++i) {
    double acc = 0;
    for (int64_t t = m.offsets[i]; t < m.offsets[i + 1]; ++t)
      acc += m.weights[t] * static_cast<double>(src[m.cols[t]]);
    dst[i] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
Tensor<T> apply_weighted_adjoint(const Tensor<T>& g, const WeightedMap& m, Shape in_shape) {
  check_usage(g.numel() == m.out_numel, "weighted adjoint: grad size mismatch");
  Tensor<T> out(std::move(in_shape));
  const T* src = g.data();
  T* dst = out.data();
  for (int64_t j = 0; j < m.in_numel; ++j) {
    double acc = 0;
    for (int64_t t = m.adj_offsets[j]; t < m.adj_offsets[j + 1]; ++t)
      acc += m.adj_weights[t] * static_cast<double>(src[m.adj_cols[t]]);
    dst[j] = static_cast<T>(acc);
  }
  return out;
}

enum class PadMode { kZero, kReflect101 };

namespace detail {

// Reflect-101 (no edge repeat): for n=5, index -2 -> 2, 6 -> 2.
inline int64_t reflect101(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace detail

// im2col over an NCHW batch. Output layout: rows are (n, oy, ox), columns are
// (c, ky, kx), so a GEMM against [C*kh*kw, Cout] produces NHWC rows.
inline std::shared_ptr<GatherMap> build_im2col(int64_t n, int64_t c, int64_t h, int64_t w,
                                               int64_t kh, int64_t kw, int64_t stride,
                                               int64_t pad, PadMode mode) {
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  auto m = std::make_shared<GatherMap>();
  m->in_numel = n * c * h * w;
  m->out_numel = n * oh * ow * c * kh * kw;
  m->idx.resize(m->out_numel);
  int64_t p = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox)
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              int64_t iy = oy * stride - pad + ky;
              int64_t ix = ox * stride - pad + kx;
              bool in_range = iy >= 0 && iy < h && ix >= 0 && ix < w;
              if (!in_range && mode == PadMode::kReflect101) {
                iy = detail::reflect101(iy, h);
                ix = detail::reflect101(ix, w);
                in_range = true;
              }
              m->idx[p++] = in_range
                                ? static_cast<int32_t>(((b * c + ci) * h + iy) * w + ix)
                                : int32_t(-1);
            }
  m->build_adjoint();
  return m;
}

// [N*OH*OW, C] rows -> NCHW tensor.
inline std::shared_ptr<GatherMap> build_rows_to_nchw(int64_t n, int64_t c, int64_t oh, int64_t ow) {
  auto m = std::make_shared<GatherMap>();
  m->in_numel = n * oh * ow * c;
  m->out_numel = m->in_numel;
  m->idx.resize(m->out_numel);
  int64_t p = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox)
          m->idx[p++] = static_cast<int32_t>(((b * oh + oy) * ow + ox) * c + ci);
  m->build_adjoint();
  return m;
}

// Shifted copy with zero fill, used by depthwise convolutions.
inline std::shared_ptr<GatherMap> build_shift(int64_t n, int64_t c, int64_t h, int64_t w,
                                              int64_t dy, int64_t dx, int64_t stride) {
  const int64_t oh = (h - 1) / stride + 1;
  const int64_t ow = (w - 1) / stride + 1;
  auto m = std::make_shared<GatherMap>();
  m->in_numel = n * c * h * w;
  m->out_numel = n * c * oh * ow;
  m->idx.resize(m->out_numel);
  int64_t p = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t iy = oy * stride + dy;
          const int64_t ix = ox * stride + dx;
          m->idx[p++] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            ? static_cast<int32_t>(((b * c + ci) * h + iy) * w + ix)
                            : int32_t(-1);
        }
  m->build_adjoint();
  return m;
}

// Bilinear resampling with half-pixel centers and edge clamping. Identity
// when sizes match (single unit tap per pixel).
inline std::shared_ptr<WeightedMap> build_bilinear_resize(int64_t n, int64_t c, int64_t h,
                                                          int64_t w, int64_t oh, int64_t ow) {
  auto m = std::make_shared<WeightedMap>();
  m->in_numel = n * c * h * w;
  m->out_numel = n * c * oh * ow;
  m->offsets.reserve(m->out_numel + 1);
  m->offsets.push_back(0);
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  // Per-row geometry is identical across (n, c); precompute one plane.
  struct Tap {
    int64_t y0, y1, x0, x1;
    double wy, wx;
  };
  std::vector<Tap> plane(oh * ow);
  for (int64_t oy = 0; oy < oh; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t ox = 0; ox < ow; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      plane[oy * ow + ox] = {y0, y1, x0, x1, wy, wx};
    }
  }
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (b * c + ci) * h * w;
      for (const Tap& t : plane) {
        const double w00 = (1 - t.wy) * (1 - t.wx);
        const double w01 = (1 - t.wy) * t.wx;
        const double w10 = t.wy * (1 - t.wx);
        const double w11 = t.wy * t.wx;
        const double ws[4] = {w00, w01, w10, w11};
        const int64_t is[4] = {base + t.y0 * w + t.x0, base + t.y0 * w + t.x1,
                               base + t.y1 * w + t.x0, base + t.y1 * w + t.x1};
        // Merge duplicate taps at clamped edges so identity resizes stay exact.
        for (int a = 0; a < 4; ++a) {
          if (ws[a] == 0.0) continue;
          double acc = ws[a];
          bool dup = false;
          for (int q = 0; q < a; ++q)
            if (is[q] == is[a] && ws[q] != 0.0) dup = true;
          if (dup) continue;
          for (int q = a + 1; q < 4; ++q)
            if (is[q] == is[a]) acc += ws[q];
          m->cols.push_back(static_cast<int32_t>(is[a]));
          m->weights.push_back(acc);
        }
        m->offsets.push_back(static_cast<int64_t>(m->cols.size()));
      }
    }
  m->build_adjoint();
  return m;
}

// 2x2 average pooling (stride 2); assumes even spatial dims.
inline std::shared_ptr<WeightedMap> build_avgpool2(int64_t n, int64_t c, int64_t h, int64_t w) {
  check_usage(h % 2 == 0 && w % 2 == 0, "avgpool2: odd spatial dims");
  const int64_t oh = h / 2, ow = w / 2;
  auto m = std::make_shared<WeightedMap>();
  m->in_numel = n * c * h * w;
  m->out_numel = n * c * oh * ow;
  m->offsets.reserve(m->out_numel + 1);
  m->offsets.push_back(0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (b * c + ci) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              m->cols.push_back(static_cast<int32_t>(base + (2 * oy + dy) * w + (2 * ox + dx)));
              m->weights.push_back(0.25);
            }
          m->offsets.push_back(static_cast<int64_t>(m->cols.size()));
        }
    }
  m->build_adjoint();
  return m;
}

// Process-wide cache; maps are immutable once built.
class MapCache {
 public:
  static MapCache& instance() {
    static MapCache cache;
    return cache;
  }

  std::shared_ptr<GatherMap> gather(const std::string& key,
                                    const std::function<std::shared_ptr<GatherMap>()>& build) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = gathers_.find(key);
    if (it != gathers_.end()) return it->second;
    auto m = build();
    gathers_.emplace(key, m);
    return m;
  }

  std::shared_ptr<WeightedMap> weighted(
      const std::string& key, const std::function<std::shared_ptr<WeightedMap>()>& build) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = weighteds_.find(key);
    if (it != weighteds_.end()) return it->second;
    auto m = build();
    weighteds_.emplace(key, m);
    return m;
  }

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<GatherMap>> gathers_;
  std::unordered_map<std::string, std::shared_ptr<WeightedMap>> weighteds_;
};

inline std::shared_ptr<GatherMap> cached_im2col(int64_t n, int64_t c, int64_t h, int64_t w,
                                                int64_t kh, int64_t kw, int64_t stride,
                                                int64_t pad, PadMode mode) {
  std::ostringstream key;
  key << "im2col:" << n << ":" << c << ":" << h << ":" << w << ":" << kh << ":" << kw << ":"
      << stride << ":" << pad << ":" << static_cast<int>(mode);
  return MapCache::instance().gather(
      key.str(), [&] { return build_im2col(n, c, h, w, kh, kw, stride, pad, mode); });
}

inline std::shared_ptr<GatherMap> cached_rows_to_nchw(int64_t n, int64_t c, int64_t oh,
                                                      int64_t ow) {
  std::ostringstream key;
  key << "rows2nchw:" << n << ":" << c << ":" << oh << ":" << ow;
  return MapCache::instance().gather(key.str(), [&] { return build_rows_to_nchw(n, c, oh, ow); });
}

inline std::shared_ptr<GatherMap> cached_shift(int64_t n, int64_t c, int64_t h, int64_t w,
                                               int64_t dy, int64_t dx, int64_t stride) {
  std::ostringstream key;
  key << "shift:" << n << ":" << c << ":" << h << ":" << w << ":" << dy << ":" << dx << ":"
      << stride;
  return MapCache::instance().gather(key.str(),
                                     [&] { return build_shift(n, c, h, w, dy, dx, stride); });
}

inline std::shared_ptr<WeightedMap> cached_bilinear_resize(int64_t n, int64_t c, int64_t h,
                                                           int64_t w, int64_t oh, int64_t ow) {
  std::ostringstream key;
  key << "bilin:" << n << ":" << c << ":" << h << ":" << w << ":" << oh << ":" << ow;
  return MapCache::instance().weighted(
      key.str(), [&] { return build_bilinear_resize(n, c, h, w, oh, ow); });
}

inline std::shared_ptr<WeightedMap> cached_avgpool2(int64_t n, int64_t c, int64_t h, int64_t w) {
  std::ostringstream key;
  key << "avgpool2:" << n << ":" << c << ":" << h << ":" << w;
  return MapCache::instance().weighted(key.str(), [&] { return build_avgpool2(n, c, h, w); });
}

}  // namespace ridgegen
