#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "ridgegen/nn.hpp"
#include "ridgegen/optim.hpp"
#include "ridgegen/serialize.hpp"

namespace ridgegen {

// Embedding models for fingerprint verification: small convolutional
// backbones in three families, trained with a large-margin cosine loss. The
// first sub-sampling stage can be removed so fine ridge detail survives into
// the feature maps.

enum class BackboneFamily { resnet_like, mobilenet_like, efficientnet_like };

inline std::string family_name(BackboneFamily f) {
  switch (f) {
    case BackboneFamily::resnet_like: return "resnet-like";
    case BackboneFamily::mobilenet_like: return "mobilenet-like";
    case BackboneFamily::efficientnet_like: return "efficientnet-like";
  }
  throw config_error("backbone: unknown family");
}

inline BackboneFamily family_from_name(const std::string& s) {
  if (s == "resnet-like") return BackboneFamily::resnet_like;
  if (s == "mobilenet-like") return BackboneFamily::mobilenet_like;
  if (s == "efficientnet-like") return BackboneFamily::efficientnet_like;
  throw config_error("backbone: unknown family '" + s + "'");
}

struct BackboneSpec {
  BackboneFamily family = BackboneFamily::resnet_like;
  std::string variant = "micro";  // micro | small
  bool remove_first_subsample = true;
  int64_t embedding_dim = 512;

  void validate() const {
    check_config(variant == "micro" || variant == "small",
                 "backbone: unknown variant '" + variant + "'");
    check_config(embedding_dim > 0, "backbone: embedding_dim must be positive");
  }

  nlohmann::json to_json() const {
    return {{"family", family_name(family)},
            {"variant", variant},
            {"remove_first_subsample", remove_first_subsample},
            {"embedding_dim", embedding_dim}};
  }

  static BackboneSpec from_json(const nlohmann::json& j) {
    BackboneSpec s;
    s.family = family_from_name(j.value("family", family_name(s.family)));
    s.variant = j.value("variant", s.variant);
    s.remove_first_subsample = j.value("remove_first_subsample", s.remove_first_subsample);
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    return s;
  }
};

struct StageDesc {
  std::string name;
  std::string kind;  // conv3x3 | maxpool2 | residual | dwsep | mbconv
  int64_t stride = 1;
  int64_t out_channels = 0;
};

struct ArchitectureDesc {
  std::vector<StageDesc> stages;

  int64_t total_downsample() const {
    int64_t f = 1;
    for (const auto& s : stages) f *= s.stride;
    return f;
  }

  // Spatial side after the named stage ("same" padding: ceil division).
  int64_t side_after(int64_t input_side, const std::string& stage_name) const {
    int64_t side = input_side;
    for (const auto& s : stages) {
      side = (side + s.stride - 1) / s.stride;
      if (s.name == stage_name) return side;
    }
    throw usage_error("architecture: no stage named '" + stage_name + "'");
  }

  int64_t feature_side(int64_t input_side) const {
    return side_after(input_side, stages.back().name);
  }
};

namespace detail {

struct BlockPlan {
  int64_t cin = 0;
  int64_t cout = 0;
  int64_t stride = 1;
};

struct BackbonePlan {
  int64_t stem_channels = 0;
  int64_t stem_stride = 2;
  bool pool_after_stem = false;
  int64_t expand = 1;  // mbconv expansion factor
  std::vector<BlockPlan> blocks;
};

inline BackbonePlan backbone_plan(const BackboneSpec& spec) {
  spec.validate();
  const bool small = spec.variant == "small";
  const std::vector<int64_t> widths =
      small ? std::vector<int64_t>{32, 64, 128} : std::vector<int64_t>{16, 32, 64};
  const int64_t repeats = small ? 2 : 1;

  BackbonePlan plan;
  plan.stem_channels = widths[0];
  plan.expand = spec.family == BackboneFamily::efficientnet_like ? 4 : 1;
  if (spec.family == BackboneFamily::resnet_like) {
    plan.stem_stride = 2;
    plan.pool_after_stem = !spec.remove_first_subsample;
  } else {
    plan.stem_stride = spec.remove_first_subsample ? 1 : 2;
    plan.pool_after_stem = false;
  }
  int64_t cin = plan.stem_channels;
  const std::vector<int64_t> group_strides = {1, 2, 2};
  for (size_t g = 0; g < widths.size(); ++g) {
    for (int64_t r = 0; r < repeats; ++r) {
      BlockPlan b;
      b.cin = cin;
      b.cout = widths[g];
      b.stride = r == 0 ? group_strides[g] : 1;
      plan.blocks.push_back(b);
      cin = b.cout;
    }
  }
  return plan;
}

}  // namespace detail

// Architecture summary honoring the first-stage adaptation; downstream
// stages are never altered by the flag.
inline ArchitectureDesc describe_architecture(const BackboneSpec& spec) {
  const auto plan = detail::backbone_plan(spec);
  ArchitectureDesc d;
  d.stages.push_back({"stem", "conv3x3", plan.stem_stride, plan.stem_channels});
  if (plan.pool_after_stem) d.stages.push_back({"pool", "maxpool2", 2, plan.stem_channels});
  const char* kind = spec.family == BackboneFamily::resnet_like       ? "residual"
                     : spec.family == BackboneFamily::mobilenet_like  ? "dwsep"
                                                                      : "mbconv";
  for (size_t i = 0; i < plan.blocks.size(); ++i)
    d.stages.push_back({"stage" + std::to_string(i + 1), kind, plan.blocks[i].stride,
                        plan.blocks[i].cout});
  return d;
}

// Depthwise 3x3 weight with equalized-lr scaling, layout [C, 9].
template <typename T>
struct DwWeight {
  Var<T> taps;
  Var<T> bias;  // [1, C]
  double w_scale = 1.0;

  DwWeight() = default;

  DwWeight(int64_t c, Rng& rng, double gain = 1.0) {
    taps = param(Tensor<T>::randn({c, 9}, rng));
    bias = param(Tensor<T>::zeros({1, c}));
    w_scale = gain / 3.0;
  }

  Var<T> scaled() const { return scale(taps, w_scale); }

  void collect(std::vector<Var<T>>& out) const {
    out.push_back(taps);
    out.push_back(bias);
  }
};

template <typename T>
class Recognizer {
 public:
  Recognizer() = default;

  Recognizer(const BackboneSpec& spec, int64_t input_resolution, int64_t num_classes, Rng& rng)
      : spec_(spec), input_res_(input_resolution), num_classes_(num_classes) {
    spec.validate();
    check_config(input_resolution >= 8, "recognizer: input resolution must be >= 8");
    check_config(num_classes >= 2, "recognizer: need at least two classes");
    plan_ = detail::backbone_plan(spec);
    const double g2 = std::sqrt(2.0);
    stem_ = EqConvWeight<T>(1, plan_.stem_channels, 3, rng, g2);
    for (const auto& b : plan_.blocks) {
      switch (spec.family) {
        case BackboneFamily::resnet_like: {
          ResBlock rb;
          rb.a = EqConvWeight<T>(b.cin, b.cout, 3, rng, g2);
          rb.b = EqConvWeight<T>(b.cout, b.cout, 3, rng, g2);
          rb.has_proj = b.stride != 1 || b.cin != b.cout;
          if (rb.has_proj) rb.proj = EqConvWeight<T>(b.cin, b.cout, 1, rng, 1.0);
          rb.stride = b.stride;
          res_.push_back(std::move(rb));
          break;
        }
        case BackboneFamily::mobilenet_like: {
          DwSepBlock db;
          db.dw = DwWeight<T>(b.cin, rng, g2);
          db.pw = EqConvWeight<T>(b.cin, b.cout, 1, rng, g2);
          db.stride = b.stride;
          dw_.push_back(std::move(db));
          break;
        }
        case BackboneFamily::efficientnet_like: {
          MbBlock mb;
          const int64_t mid = b.cin * plan_.expand;
          mb.expand = EqConvWeight<T>(b.cin, mid, 1, rng, g2);
          mb.dw = DwWeight<T>(mid, rng, g2);
          mb.project = EqConvWeight<T>(mid, b.cout, 1, rng, 1.0);
          mb.stride = b.stride;
          mb.residual = b.stride == 1 && b.cin == b.cout;
          mb_.push_back(std::move(mb));
          break;
        }
      }
    }
    const int64_t feat = plan_.blocks.back().cout;
    head_ = EqLinear<T>(feat, spec.embedding_dim, rng, 1.0, 1.0);
    class_weights_ = param(Tensor<T>::randn({num_classes, spec.embedding_dim}, rng));
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }
  const BackboneSpec& spec() const { return spec_; }
  int64_t input_resolution() const { return input_res_; }
  int64_t num_classes() const { return num_classes_; }
  const Var<T>& class_weights() const { return class_weights_; }

  // [N, 1, res, res] -> [N, embedding_dim], rows unit-normalized.
  Var<T> embed(const Var<T>& images) const {
    check_usage(initialized_, "recognizer: state not initialized");
    check_usage(images.shape().size() == 4 && images.dim(1) == 1 &&
                    images.dim(2) == input_res_ && images.dim(3) == input_res_,
                "recognizer: expected [N, 1, " + std::to_string(input_res_) + ", " +
                    std::to_string(input_res_) + "] input");
    Var<T> x = conv2d(images, stem_.scaled(), 3, 3, plan_.stem_stride, 1);
    x = lrelu(channel_bias(x, stem_.bias), 0.2);
    if (plan_.pool_after_stem) x = maxpool2(x);
    for (const auto& rb : res_) {
      Var<T> h = lrelu(channel_bias(conv2d(x, rb.a.scaled(), 3, 3, rb.stride, 1), rb.a.bias), 0.2);
      h = channel_bias(conv2d(h, rb.b.scaled(), 3, 3, 1, 1), rb.b.bias);
      Var<T> sc = rb.has_proj
                      ? channel_bias(conv2d(x, rb.proj.scaled(), 1, 1, rb.stride, 0), rb.proj.bias)
                      : x;
      x = lrelu(add(h, sc), 0.2);
    }
    for (const auto& db : dw_) {
      Var<T> h = lrelu(channel_bias(depthwise_conv3x3(x, db.dw.scaled(), db.stride), db.dw.bias),
                       0.2);
      x = lrelu(channel_bias(conv2d(h, db.pw.scaled(), 1, 1, 1, 0), db.pw.bias), 0.2);
    }
    for (const auto& mb : mb_) {
      Var<T> h = lrelu(channel_bias(conv2d(x, mb.expand.scaled(), 1, 1, 1, 0), mb.expand.bias),
                       0.2);
      h = lrelu(channel_bias(depthwise_conv3x3(h, mb.dw.scaled(), mb.stride), mb.dw.bias), 0.2);
      h = channel_bias(conv2d(h, mb.project.scaled(), 1, 1, 1, 0), mb.project.bias);
      x = mb.residual ? add(h, x) : h;
    }
    return l2_normalize_rows(head_.forward(global_avg_pool(x)));
  }

  std::vector<Var<T>> params() const {
    std::vector<Var<T>> out;
    stem_.collect(out);
    for (const auto& rb : res_) {
      rb.a.collect(out);
      rb.b.collect(out);
      if (rb.has_proj) rb.proj.collect(out);
    }
    for (const auto& db : dw_) {
      db.dw.collect(out);
      db.pw.collect(out);
    }
    for (const auto& mb : mb_) {
      mb.expand.collect(out);
      mb.dw.collect(out);
      mb.project.collect(out);
    }
    head_.collect(out);
    out.push_back(class_weights_);
    return out;
  }

 private:
  struct ResBlock {
    EqConvWeight<T> a, b, proj;
    bool has_proj = false;
    int64_t stride = 1;
  };
  struct DwSepBlock {
    DwWeight<T> dw;
    EqConvWeight<T> pw;
    int64_t stride = 1;
  };
  struct MbBlock {
    EqConvWeight<T> expand, project;
    DwWeight<T> dw;
    int64_t stride = 1;
    bool residual = false;
  };

  BackboneSpec spec_;
  int64_t input_res_ = 0;
  int64_t num_classes_ = 0;
  detail::BackbonePlan plan_;
  EqConvWeight<T> stem_;
  std::vector<ResBlock> res_;
  std::vector<DwSepBlock> dw_;
  std::vector<MbBlock> mb_;
  EqLinear<T> head_;
  Var<T> class_weights_;
  bool initialized_ = false;
};

// Softmax cross-entropy over s*(cos - m*[true class]) logits. Both the
// embedding rows and the class-weight rows must arrive unit-normalized.
template <typename T>
Var<T> margin_cosine_loss(const Var<T>& embeddings, const Var<T>& class_weights,
                          const std::vector<int64_t>& labels, double margin, double logit_scale) {
  check_usage(embeddings.shape().size() == 2 && class_weights.shape().size() == 2 &&
                  embeddings.dim(1) == class_weights.dim(1),
              "margin_cosine_loss: embedding/weight dimension mismatch");
  const int64_t n = embeddings.dim(0), c = class_weights.dim(0);
  check_usage(static_cast<int64_t>(labels.size()) == n,
              "margin_cosine_loss: one label per embedding");
  check_config(margin >= 0 && logit_scale > 0, "margin_cosine_loss: invalid margin or scale");
  auto check_rows_normalized = [](const Tensor<T>& t, const char* what) {
    for (int64_t i = 0; i < t.dim(0); ++i) {
      double sq = 0;
      for (int64_t j = 0; j < t.dim(1); ++j) sq += static_cast<double>(t.at2(i, j)) * t.at2(i, j);
      check_usage(std::abs(std::sqrt(sq) - 1.0) < 1e-3,
                  std::string("margin_cosine_loss: ") + what + " rows must be unit-normalized");
    }
  };
  check_rows_normalized(embeddings.value(), "embedding");
  check_rows_normalized(class_weights.value(), "class weight");

  Tensor<T> margin_mask = Tensor<T>::zeros({n, c});
  Tensor<T> pick = Tensor<T>::zeros({n, c});
  for (int64_t i = 0; i < n; ++i) {
    check_usage(labels[i] >= 0 && labels[i] < c, "margin_cosine_loss: label out of range");
    margin_mask.at2(i, labels[i]) = static_cast<T>(margin);
    pick.at2(i, labels[i]) = T(1);
  }

  Var<T> logits = scale(sub(matmul(embeddings, transpose(class_weights)),
                            constant(std::move(margin_mask))),
                        logit_scale);
  Var<T> mx = rowwise_max_detached(logits);
  Var<T> lse = add(log_v(sum_cols(exp_v(sub(logits, tile_cols(mx, c))))), mx);
  Var<T> picked = sum_cols(mul(logits, constant(std::move(pick))));
  return mean_all(sub(lse, picked));
}

// ---- random affine augmentation ----

struct AffineRanges {
  double max_rotation_deg = 15.0;
  double max_translate_frac = 0.1;
  double scale_min = 0.9;
  double scale_max = 1.1;

  void validate() const {
    check_config(max_rotation_deg >= 0 && max_translate_frac >= 0,
                 "affine ranges: rotation/translation bounds must be non-negative");
    check_config(scale_min > 0 && scale_min <= scale_max,
                 "affine ranges: need 0 < scale_min <= scale_max");
  }

  nlohmann::json to_json() const {
    return {{"max_rotation_deg", max_rotation_deg},
            {"max_translate_frac", max_translate_frac},
            {"scale_min", scale_min},
            {"scale_max", scale_max}};
  }

  static AffineRanges from_json(const nlohmann::json& j) {
    AffineRanges r;
    r.max_rotation_deg = j.value("max_rotation_deg", r.max_rotation_deg);
    r.max_translate_frac = j.value("max_translate_frac", r.max_translate_frac);
    r.scale_min = j.value("scale_min", r.scale_min);
    r.scale_max = j.value("scale_max", r.scale_max);
    return r;
  }
};

// Rotation/translation/scale around the image center with bilinear
// resampling; samples outside the source are filled with the background.
inline Tensor<double> affine_warp(const Tensor<double>& image, double angle_rad, double tx,
                                  double ty, double zoom, double background = 1.0) {
  check_usage(image.ndim() == 2, "affine_warp: expected a 2-d image");
  check_usage(zoom > 0, "affine_warp: zoom must be positive");
  const int64_t h = image.dim(0), w = image.dim(1);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);

  Tensor<double> out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      // Invert dest = center + R*zoom*(src - center) + t.
      const double dy = y - cy - ty, dx = x - cx - tx;
      const double sy = cy + (-sa * dx + ca * dy) / zoom;
      const double sx = cx + (ca * dx + sa * dy) / zoom;
      const int64_t y0 = static_cast<int64_t>(std::floor(sy));
      const int64_t x0 = static_cast<int64_t>(std::floor(sx));
      const double wy = sy - y0, wx = sx - x0;
      auto tap = [&](int64_t yy, int64_t xx) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return background;
        return image.at2(yy, xx);
      };
      out.at2(y, x) = (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                      wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
    }
  return out;
}

inline Tensor<double> random_affine(const Tensor<double>& image, const AffineRanges& ranges,
                                    Rng& rng, double background = 1.0) {
  ranges.validate();
  check_usage(image.ndim() == 2, "random_affine: expected a 2-d image");
  const int64_t h = image.dim(0), w = image.dim(1);
  auto span = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  const double angle = span(-ranges.max_rotation_deg, ranges.max_rotation_deg) * M_PI / 180.0;
  const double tx = span(-ranges.max_translate_frac, ranges.max_translate_frac) * w;
  const double ty = span(-ranges.max_translate_frac, ranges.max_translate_frac) * h;
  const double zoom = span(ranges.scale_min, ranges.scale_max);
  return affine_warp(image, angle, tx, ty, zoom, background);
}

// ---- training ----

struct LabeledImageSet {
  Tensor<float> images;  // [N, 1, H, W]
  std::vector<int64_t> labels;
  std::vector<std::string> label_names;

  int64_t size() const { return images.defined() ? images.dim(0) : 0; }

  void validate() const {
    check_config(images.defined() && images.ndim() == 4 && images.dim(1) == 1,
                 "labeled image set: expected [N, 1, H, W] images");
    check_config(static_cast<int64_t>(labels.size()) == images.dim(0),
                 "labeled image set: one label per image");
    const int64_t c = static_cast<int64_t>(label_names.size());
    check_config(c >= 2, "labeled image set: need at least two identities");
    std::vector<int64_t> counts(label_names.size(), 0);
    for (int64_t l : labels) {
      check_config(l >= 0 && l < c, "labeled image set: label index out of range");
      counts[l]++;
    }
    for (int64_t cnt : counts)
      check_config(cnt >= 2, "labeled image set: every identity needs at least two impressions");
  }
};

struct RecognizerTrainConfig {
  int64_t epochs = 5;
  int64_t batch_size = 32;
  double lr = 1e-3;
  double margin = 0.35;
  double logit_scale = 64.0;
  bool augment = true;
  AffineRanges affine;
  double background = 1.0;
  uint64_t seed = 1;

  void validate() const {
    check_config(epochs >= 1, "recognizer training: epochs must be >= 1");
    check_config(batch_size >= 2, "recognizer training: batch size must be >= 2");
    check_config(lr > 0, "recognizer training: lr must be positive");
    check_config(margin >= 0 && logit_scale > 0,
                 "recognizer training: invalid margin or logit scale");
    affine.validate();
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"margin", margin},
            {"logit_scale", logit_scale},
            {"augment", augment},
            {"affine", affine.to_json()},
            {"background", background},
            {"seed", seed}};
  }

  static RecognizerTrainConfig from_json(const nlohmann::json& j) {
    RecognizerTrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.margin = j.value("margin", c.margin);
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.augment = j.value("augment", c.augment);
    if (j.contains("affine")) c.affine = AffineRanges::from_json(j.at("affine"));
    c.background = j.value("background", c.background);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct EpochStats {
  double loss = 0;
  double accuracy = 0;  // identification accuracy over training batches
};

template <typename T>
std::vector<EpochStats> train_recognizer(Recognizer<T>& model, const LabeledImageSet& data,
                                         const RecognizerTrainConfig& cfg) {
  cfg.validate();
  data.validate();
  check_config(static_cast<int64_t>(data.label_names.size()) == model.num_classes(),
               "recognizer training: dataset class count does not match the model");
  check_usage(data.images.dim(2) == model.input_resolution() &&
                  data.images.dim(3) == model.input_resolution(),
              "recognizer training: image resolution does not match the model");

  const int64_t n = data.size();
  const int64_t res = model.input_resolution();
  Adam<T> opt(model.params(), cfg.lr);
  Rng rng(cfg.seed);

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStats> history;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    double loss_sum = 0;
    int64_t loss_batches = 0, correct = 0;
    for (int64_t begin = 0; begin < n; begin += cfg.batch_size) {
      const int64_t bs = std::min<int64_t>(cfg.batch_size, n - begin);
      if (bs < 2) break;  // a 1-sample tail adds no usable contrast
      Tensor<T> batch({bs, 1, res, res});
      std::vector<int64_t> labels(bs);
      for (int64_t b = 0; b < bs; ++b) {
        const int64_t src = order[begin + b];
        labels[b] = data.labels[src];
        if (cfg.augment) {
          Tensor<double> img({res, res});
          for (int64_t p = 0; p < res * res; ++p)
            img[p] = static_cast<double>(data.images[src * res * res + p]);
          Tensor<double> warped = random_affine(img, cfg.affine, rng, cfg.background);
          for (int64_t p = 0; p < res * res; ++p)
            batch[b * res * res + p] = static_cast<T>(warped[p]);
        } else {
          for (int64_t p = 0; p < res * res; ++p)
            batch[b * res * res + p] = static_cast<T>(data.images[src * res * res + p]);
        }
      }

      Var<T> emb = model.embed(constant(std::move(batch)));
      Var<T> weights = l2_normalize_rows(model.class_weights());
      Var<T> loss = margin_cosine_loss(emb, weights, labels, cfg.margin, cfg.logit_scale);
      check_finite(loss.value(), "recognizer loss", epoch);

      {
        NoGradGuard ng;
        Tensor<T> cos = matmul(emb, transpose(weights)).value();
        for (int64_t b = 0; b < bs; ++b) {
          int64_t arg = 0;
          for (int64_t c = 1; c < model.num_classes(); ++c)
            if (cos.at2(b, c) > cos.at2(b, arg)) arg = c;
          if (arg == labels[b]) correct++;
        }
      }

      loss_sum += static_cast<double>(loss.value()[0]);
      loss_batches++;
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    EpochStats st;
    st.loss = loss_sum / static_cast<double>(std::max<int64_t>(1, loss_batches));
    st.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    history.push_back(st);
  }
  return history;
}

// Deterministic, gradient-free embedding extraction.
template <typename T>
Tensor<T> extract_embedding(const Recognizer<T>& model, const Tensor<T>& images) {
  check_usage(images.defined() && images.ndim() == 4, "extract_embedding: expected [N,1,H,W]");
  NoGradGuard ng;
  return model.embed(constant(images.clone())).value();
}

// ---- checkpointing ----

template <typename T>
void save_recognizer(const Recognizer<T>& model, const std::filesystem::path& path,
                     const std::vector<std::string>& label_names = {}) {
  nlohmann::json config;
  config["spec"] = model.spec().to_json();
  config["input_resolution"] = model.input_resolution();
  config["num_classes"] = model.num_classes();
  config["label_names"] = label_names;
  CheckpointWriter w("recognizer", config, 0);
  auto params = model.params();
  for (size_t i = 0; i < params.size(); ++i)
    w.add("p." + std::to_string(i), params[i].value().template cast<float>());
  w.write(path);
}

template <typename T>
Recognizer<T> load_recognizer(const std::filesystem::path& path,
                              std::vector<std::string>* label_names = nullptr) {
  const Checkpoint ck = Checkpoint::load(path);
  check_integrity(ck.kind == "recognizer", "checkpoint: expected a recognizer checkpoint");
  Rng rng(0);
  Recognizer<T> model(BackboneSpec::from_json(ck.config.at("spec")),
                      ck.config.at("input_resolution").get<int64_t>(),
                      ck.config.at("num_classes").get<int64_t>(), rng);
  auto params = model.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& src = ck.array("p." + std::to_string(i));
    check_integrity(src.shape() == params[i].shape(),
                    "checkpoint: shape mismatch for p." + std::to_string(i));
    Var<T> p = params[i];
    p.mutable_value() = src.template cast<T>();
  }
  if (label_names) *label_names = ck.config.value("label_names", std::vector<std::string>{});
  return model;
}

// ---- embedding export ----

struct EmbeddingRecord {
  std::string identity_label;
  int64_t impression_index = 0;
  std::vector<float> vector;
};

// Flat little-endian float32 rows next to a JSON sidecar describing count,
// dimension, layout, and per-row labels.
inline void write_embeddings(const std::filesystem::path& bin_path,
                             const std::filesystem::path& json_path,
                             const std::vector<EmbeddingRecord>& records) {
  check_usage(!records.empty(), "write_embeddings: no records");
  const size_t dim = records[0].vector.size();
  check_usage(dim > 0, "write_embeddings: empty vectors");
  for (const auto& r : records) {
    check_usage(r.vector.size() == dim, "write_embeddings: inconsistent dimensions");
    double sq = 0;
    for (float v : r.vector) sq += static_cast<double>(v) * v;
    check_usage(std::abs(std::sqrt(sq) - 1.0) < 1e-4,
                "write_embeddings: vectors must be unit-normalized");
  }

  std::FILE* f = std::fopen(bin_path.string().c_str(), "wb");
  check_integrity(f != nullptr, "write_embeddings: cannot open " + bin_path.string());
  for (const auto& r : records)
    if (std::fwrite(r.vector.data(), sizeof(float), dim, f) != dim) {
      std::fclose(f);
      throw integrity_error("write_embeddings: short write to " + bin_path.string());
    }
  std::fclose(f);

  nlohmann::json side;
  side["count"] = records.size();
  side["dim"] = dim;
  side["dtype"] = "float32";
  side["byte_order"] = "little";
  side["layout"] = "row-major";
  side["records"] = nlohmann::json::array();
  for (const auto& r : records)
    side["records"].push_back(
        {{"label", r.identity_label}, {"impression", r.impression_index}});
  std::FILE* j = std::fopen(json_path.string().c_str(), "wb");
  check_integrity(j != nullptr, "write_embeddings: cannot open " + json_path.string());
  const std::string text = side.dump(2);
  std::fwrite(text.data(), 1, text.size(), j);
  std::fclose(j);
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& bin_path,
                                                    const std::filesystem::path& json_path) {
  std::FILE* jf = std::fopen(json_path.string().c_str(), "rb");
  check_integrity(jf != nullptr, "read_embeddings: cannot open " + json_path.string());
  std::string text;
  char buf[4096];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), jf)) > 0) text.append(buf, got);
  std::fclose(jf);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("read_embeddings: bad sidecar: " + std::string(e.what()));
  }
  const size_t count = side.at("count").get<size_t>();
  const size_t dim = side.at("dim").get<size_t>();
  check_integrity(side.at("dtype") == "float32" && side.at("layout") == "row-major",
                  "read_embeddings: unsupported layout");
  check_integrity(side.at("records").size() == count, "read_embeddings: record count mismatch");

  std::FILE* bf = std::fopen(bin_path.string().c_str(), "rb");
  check_integrity(bf != nullptr, "read_embeddings: cannot open " + bin_path.string());
  std::fseek(bf, 0, SEEK_END);
  const long actual = std::ftell(bf);
  std::fseek(bf, 0, SEEK_SET);
  if (static_cast<size_t>(actual) != count * dim * sizeof(float)) {
    std::fclose(bf);
    throw integrity_error("read_embeddings: data size does not match the sidecar");
  }
  std::vector<EmbeddingRecord> records(count);
  for (size_t i = 0; i < count; ++i) {
    records[i].identity_label = side.at("records")[i].at("label").get<std::string>();
    records[i].impression_index = side.at("records")[i].at("impression").get<int64_t>();
    records[i].vector.resize(dim);
    if (std::fread(records[i].vector.data(), sizeof(float), dim, bf) != dim) {
      std::fclose(bf);
      throw integrity_error("read_embeddings: short read from " + bin_path.string());
    }
  }
  std::fclose(bf);
  return records;
}

}  // namespace ridgegen
