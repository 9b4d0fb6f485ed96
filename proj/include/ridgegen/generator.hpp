#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "ridgegen/contrastive.hpp"
#include "ridgegen/latent.hpp"
#include "ridgegen/nn.hpp"
#include "ridgegen/optim.hpp"
#include "ridgegen/serialize.hpp"

namespace ridgegen {

// Style-based generator/discriminator pair. Two separate mapping networks
// turn z_id and z_app into style halves; their concatenation [w_id, w_app]
// feeds every synthesis block, so the identity half is byte-identical across
// same-identity batch slots.

struct GeneratorConfig {
  int64_t resolution = 64;
  int64_t mapping_depth = 8;
  int64_t d_id = 256;
  int64_t d_app = 256;
  int64_t style_dim = 256;
  std::vector<int64_t> channels;  // per block starting at 4x4; empty -> defaults
  double lr = 2e-3;
  double mapping_lr_mul = 0.01;
  int64_t batch_size = 16;
  int64_t num_same_id_pairs = 4;
  int64_t num_same_app_pairs = 4;
  int64_t total_steps = 10000;
  double r1_gamma = 1.0;
  int64_t r1_interval = 16;
  bool use_noise = false;

  int64_t num_blocks() const {
    int64_t n = 0, r = 4;
    while (r <= resolution) {
      ++n;
      r *= 2;
    }
    return n;
  }

  std::vector<int64_t> resolved_channels() const {
    if (!channels.empty()) return channels;
    std::vector<int64_t> out;
    for (int64_t i = 0; i < num_blocks(); ++i)
      out.push_back(std::max<int64_t>(16, std::min<int64_t>(128, 256 >> (i + 1))));
    return out;
  }

  void validate() const {
    check_config(resolution >= 16 && (resolution & (resolution - 1)) == 0,
                 "generator: resolution must be a power of two >= 16");
    check_config(mapping_depth >= 1, "generator: mapping_depth must be >= 1");
    check_config(d_id > 0 && d_app > 0 && style_dim > 0, "generator: dims must be positive");
    check_config(channels.empty() ||
                     static_cast<int64_t>(channels.size()) == num_blocks(),
                 "generator: channel schedule must list one width per block");
    for (int64_t c : channels) check_config(c > 0, "generator: channel widths must be positive");
    check_config(lr > 0 && mapping_lr_mul > 0, "generator: learning rates must be positive");
    check_config(batch_size >= 2, "generator: batch size must be >= 2");
    check_config(2 * (num_same_id_pairs + num_same_app_pairs) <= batch_size,
                 "generator: pairing does not fit the batch");
    check_config(r1_interval >= 1, "generator: r1_interval must be >= 1");
    check_config(r1_gamma >= 0, "generator: r1_gamma must be >= 0");
    check_config(total_steps >= 0, "generator: total_steps must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"resolution", resolution},
            {"mapping_depth", mapping_depth},
            {"d_id", d_id},
            {"d_app", d_app},
            {"style_dim", style_dim},
            {"channels", channels},
            {"lr", lr},
            {"mapping_lr_mul", mapping_lr_mul},
            {"batch_size", batch_size},
            {"num_same_id_pairs", num_same_id_pairs},
            {"num_same_app_pairs", num_same_app_pairs},
            {"total_steps", total_steps},
            {"r1_gamma", r1_gamma},
            {"r1_interval", r1_interval},
            {"use_noise", use_noise}};
  }

  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    cfg.resolution = j.value("resolution", cfg.resolution);
    cfg.mapping_depth = j.value("mapping_depth", cfg.mapping_depth);
    cfg.d_id = j.value("d_id", cfg.d_id);
    cfg.d_app = j.value("d_app", cfg.d_app);
    cfg.style_dim = j.value("style_dim", cfg.style_dim);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.mapping_lr_mul = j.value("mapping_lr_mul", cfg.mapping_lr_mul);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.num_same_id_pairs = j.value("num_same_id_pairs", cfg.num_same_id_pairs);
    cfg.num_same_app_pairs = j.value("num_same_app_pairs", cfg.num_same_app_pairs);
    cfg.total_steps = j.value("total_steps", cfg.total_steps);
    cfg.r1_gamma = j.value("r1_gamma", cfg.r1_gamma);
    cfg.r1_interval = j.value("r1_interval", cfg.r1_interval);
    cfg.use_noise = j.value("use_noise", cfg.use_noise);
    return cfg;
  }
};

template <typename T>
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto ch = cfg_.resolved_channels();
    map_id_ = MappingNet<T>(cfg_.d_id, cfg_.style_dim, cfg_.mapping_depth, rng,
                            cfg_.mapping_lr_mul);
    map_app_ = MappingNet<T>(cfg_.d_app, cfg_.style_dim, cfg_.mapping_depth, rng,
                             cfg_.mapping_lr_mul);
    const_input_ = param(Tensor<T>::randn({1, ch[0] * 16}, rng));
    const int64_t style_total = 2 * cfg_.style_dim;
    for (size_t i = 0; i < ch.size(); ++i) {
      const int64_t cin = i == 0 ? ch[0] : ch[i - 1];
      Block b;
      b.affine = EqLinear<T>(style_total, cin, rng, 1.0, 1.0);
      b.conv = EqConvWeight<T>(cin, ch[i], 3, rng, std::sqrt(2.0));
      b.noise_weight = param(Tensor<T>::zeros({1, 1}));
      blocks_.push_back(std::move(b));
    }
    gray_affine_ = EqLinear<T>(style_total, ch.back(), rng, 1.0, 1.0);
    to_gray_ = EqConvWeight<T>(ch.back(), 1, 1, rng, 1.0);
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }
  const GeneratorConfig& config() const { return cfg_; }

  // [N, d_id] x [N, d_app] -> [N, 2*style_dim], identity half first.
  Var<T> map_latents(const Var<T>& z_id, const Var<T>& z_app) const {
    check_usage(initialized_, "generator: state not initialized");
    check_usage(z_id.dim(0) == z_app.dim(0), "map_latents: batch size mismatch");
    check_usage(z_id.dim(1) == cfg_.d_id && z_app.dim(1) == cfg_.d_app,
                "map_latents: latent dimension mismatch");
    return concat_cols(map_id_.forward(z_id), map_app_.forward(z_app));
  }

  Var<T> map_latents(const BatchPlan& plan) const {
    return map_latents(constant(pack_z_id<T>(plan)), constant(pack_z_app<T>(plan)));
  }

  // Style batch -> images [N, 1, res, res] in (0, 1).
  Var<T> synthesize(const Var<T>& style, uint64_t noise_seed = 0) const {
    check_usage(initialized_, "generator: state not initialized");
    check_usage(style.shape().size() == 2 && style.dim(1) == 2 * cfg_.style_dim,
                "synthesize: style width mismatch");
    const auto ch = cfg_.resolved_channels();
    const int64_t n = style.dim(0);
    Rng noise_rng(noise_seed);
    Var<T> x = reshape(tile_rows(const_input_, n), {n, ch[0], 4, 4});
    for (size_t i = 0; i < blocks_.size(); ++i) {
      if (i > 0) x = upsample2x(x);
      Var<T> s = add_scalar(blocks_[i].affine.forward(style), 1.0);
      x = modulated_conv2d(x, blocks_[i].conv.scaled(), s, 3, /*demodulate=*/true);
      if (cfg_.use_noise) {
        Rng layer_rng = noise_rng.derive(i);
        const Shape noise_shape{n, ch[i], x.dim(2), x.dim(3)};
        Tensor<T> noise = Tensor<T>::randn(noise_shape, layer_rng);
        x = add(x, mul(broadcast_full(blocks_[i].noise_weight, noise_shape),
                       constant(std::move(noise))));
      }
      x = lrelu(channel_bias(x, blocks_[i].conv.bias), 0.2);
    }
    Var<T> sg = add_scalar(gray_affine_.forward(style), 1.0);
    Var<T> y = modulated_conv2d(x, to_gray_.scaled(), sg, 1, /*demodulate=*/false);
    y = channel_bias(y, to_gray_.bias);
    return scale(add_scalar(tanh_v(y), 1.0), 0.5);
  }

  std::vector<Var<T>> params() const {
    std::vector<Var<T>> out;
    map_id_.collect(out);
    map_app_.collect(out);
    out.push_back(const_input_);
    for (const auto& b : blocks_) {
      b.affine.collect(out);
      b.conv.collect(out);
      out.push_back(b.noise_weight);
    }
    gray_affine_.collect(out);
    to_gray_.collect(out);
    return out;
  }

  std::vector<Var<T>> mapping_id_params() const {
    std::vector<Var<T>> out;
    map_id_.collect(out);
    return out;
  }

  std::vector<Var<T>> mapping_app_params() const {
    std::vector<Var<T>> out;
    map_app_.collect(out);
    return out;
  }

  std::vector<Var<T>> noise_weights() const {
    std::vector<Var<T>> out;
    for (const auto& b : blocks_) out.push_back(b.noise_weight);
    return out;
  }

 private:
  struct Block {
    EqLinear<T> affine;
    EqConvWeight<T> conv;
    Var<T> noise_weight;
  };

  GeneratorConfig cfg_;
  MappingNet<T> map_id_, map_app_;
  Var<T> const_input_;
  std::vector<Block> blocks_;
  EqLinear<T> gray_affine_;
  EqConvWeight<T> to_gray_;
  bool initialized_ = false;
};

template <typename T>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto ch = cfg_.resolved_channels();
    from_gray_ = EqConvWeight<T>(1, ch.back(), 1, rng, 1.0);
    for (size_t i = ch.size() - 1; i >= 1; --i)
      convs_.emplace_back(ch[i], ch[i - 1], 3, rng, std::sqrt(2.0));
    final_conv_ = EqConvWeight<T>(ch[0] + 1, ch[0], 3, rng, std::sqrt(2.0));
    dense_ = EqLinear<T>(ch[0] * 16, ch[0], rng, 1.0, std::sqrt(2.0));
    out_ = EqLinear<T>(ch[0], 1, rng, 1.0, 1.0);
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }

  // [N, 1, res, res] -> [N, 1] logits.
  Var<T> forward(const Var<T>& images) const {
    check_usage(initialized_, "discriminator: state not initialized");
    check_usage(images.shape().size() == 4 && images.dim(1) == 1 &&
                    images.dim(2) == cfg_.resolution && images.dim(3) == cfg_.resolution,
                "discriminator: expected [N, 1, res, res]");
    const auto ch = cfg_.resolved_channels();
    Var<T> x = conv2d(images, from_gray_.scaled(), 1, 1, 1, 0);
    x = lrelu(channel_bias(x, from_gray_.bias), 0.2);
    for (const auto& conv : convs_) {
      x = conv2d(x, conv.scaled(), 3, 3, 1, 1);
      x = lrelu(channel_bias(x, conv.bias), 0.2);
      x = downsample2x(x);
    }
    x = minibatch_stddev_channel(x);
    x = conv2d(x, final_conv_.scaled(), 3, 3, 1, 1);
    x = lrelu(channel_bias(x, final_conv_.bias), 0.2);
    Var<T> flat = reshape(x, {x.dim(0), ch[0] * 16});
    return out_.forward(lrelu(dense_.forward(flat), 0.2));
  }

  std::vector<Var<T>> params() const {
    std::vector<Var<T>> out;
    from_gray_.collect(out);
    for (const auto& c : convs_) c.collect(out);
    final_conv_.collect(out);
    dense_.collect(out);
    out_.collect(out);
    return out;
  }

 private:
  GeneratorConfig cfg_;
  EqConvWeight<T> from_gray_;
  std::vector<EqConvWeight<T>> convs_;
  EqConvWeight<T> final_conv_;
  EqLinear<T> dense_;
  EqLinear<T> out_;
  bool initialized_ = false;
};

struct StepReport {
  double adv_loss = 0;  // generator-side adversarial loss
  double d_loss = 0;
  double id_part = 0;
  double app_part = 0;
  double total = 0;  // adv_loss + id_part + w_app * app_part
};

// Full training state: both networks, both optimizers, the step counter, and
// the training random source. Checkpoints round-trip this exactly.
template <typename T>
struct GanState {
  GeneratorConfig cfg;
  ContrastiveConfig closs;
  Generator<T> g;
  Discriminator<T> d;
  Adam<T> opt_g;
  Adam<T> opt_d;
  int64_t step = 0;
  Rng rng{0};

  static GanState init(const GeneratorConfig& cfg, const ContrastiveConfig& closs,
                       uint64_t seed) {
    cfg.validate();
    closs.validate();
    GanState s;
    s.cfg = cfg;
    s.closs = closs;
    Rng root(seed);
    Rng g_rng = root.derive(1);
    Rng d_rng = root.derive(2);
    s.g = Generator<T>(cfg, g_rng);
    s.d = Discriminator<T>(cfg, d_rng);
    s.opt_g = Adam<T>(s.g.params(), cfg.lr);
    s.opt_d = Adam<T>(s.d.params(), cfg.lr);
    s.rng = root.derive(3);
    return s;
  }

  BatchPlan next_plan() {
    return make_training_batch(rng, cfg.batch_size, cfg.num_same_id_pairs,
                               cfg.num_same_app_pairs, LatentDims{cfg.d_id, cfg.d_app});
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json config;
    config["generator"] = cfg.to_json();
    config["contrastive"] = closs.to_json();
    CheckpointWriter w("gan", config, step);
    auto dump = [&w](const char* prefix, const std::vector<Var<T>>& params) {
      for (size_t i = 0; i < params.size(); ++i)
        w.add(std::string(prefix) + "." + std::to_string(i),
              params[i].value().template cast<float>());
    };
    dump("g", g.params());
    dump("d", d.params());
    auto dump_moments = [&w](const char* prefix, const std::vector<Tensor<T>>& ms) {
      for (size_t i = 0; i < ms.size(); ++i)
        w.add(std::string(prefix) + "." + std::to_string(i), ms[i].template cast<float>());
    };
    dump_moments("gm", opt_g.first_moments());
    dump_moments("gv", opt_g.second_moments());
    dump_moments("dm", opt_d.first_moments());
    dump_moments("dv", opt_d.second_moments());
    w.add_extra("rng", rng.serialize());
    w.add_extra("opt_g_steps", opt_g.step_count());
    w.add_extra("opt_d_steps", opt_d.step_count());
    w.write(path);
  }

  static GanState load(const std::filesystem::path& path) {
    const Checkpoint ck = Checkpoint::load(path);
    check_integrity(ck.kind == "gan", "checkpoint: expected a gan checkpoint");
    GanState s = init(GeneratorConfig::from_json(ck.config.at("generator")),
                      ContrastiveConfig::from_json(ck.config.at("contrastive")), 0);
    auto restore = [&ck](const char* prefix, const std::vector<Var<T>>& params) {
      for (size_t i = 0; i < params.size(); ++i) {
        const auto& src = ck.array(std::string(prefix) + "." + std::to_string(i));
        Var<T> p = params[i];
        check_integrity(src.shape() == p.shape(),
                        std::string("checkpoint: shape mismatch for ") + prefix + "." +
                            std::to_string(i));
        p.mutable_value() = src.template cast<T>();
      }
    };
    restore("g", s.g.params());
    restore("d", s.d.params());
    auto restore_moments = [&ck](const char* prefix, std::vector<Tensor<T>>& ms) {
      for (size_t i = 0; i < ms.size(); ++i)
        ms[i] = ck.array(std::string(prefix) + "." + std::to_string(i)).template cast<T>();
    };
    restore_moments("gm", s.opt_g.first_moments());
    restore_moments("gv", s.opt_g.second_moments());
    restore_moments("dm", s.opt_d.first_moments());
    restore_moments("dv", s.opt_d.second_moments());
    s.step = ck.step;
    s.rng = Rng::deserialize(ck.extra.at("rng").get<std::string>());
    s.opt_g.set_step_count(ck.extra.at("opt_g_steps").get<int64_t>());
    s.opt_d.set_step_count(ck.extra.at("opt_d_steps").get<int64_t>());
    return s;
  }
};

namespace detail {

template <typename T>
double loss_value(const Var<T>& v, const char* component, int64_t step) {
  const double x = static_cast<double>(v.value()[0]);
  if (!std::isfinite(x))
    throw training_fault(std::string("non-finite ") + component + " at step " +
                         std::to_string(step));
  return x;
}

}  // namespace detail

// One alternating adversarial update: a discriminator step on real vs
// detached fake images (with lazy R1 on schedule), then a generator step on
// the non-saturating adversarial loss plus the contrastive loss. The
// embedding model stays frozen; gradients flow through it into the images.
template <typename T>
StepReport gan_train_step(GanState<T>& state, const BatchPlan& plan,
                          const Tensor<T>& real_images,
                          const std::function<Var<T>(const Var<T>&)>& embed) {
  check_usage(real_images.defined() && real_images.ndim() == 4 &&
                  real_images.dim(0) == plan.size(),
              "gan_train_step: real batch must match the plan size");
  const int64_t n = plan.size();
  StepReport report;

  // Discriminator step.
  Tensor<T> fake_detached;
  {
    NoGradGuard ng;
    fake_detached = state.g.synthesize(state.g.map_latents(plan), state.step).value();
  }
  Var<T> real_leaf = param(real_images.clone());
  Var<T> d_real = state.d.forward(real_leaf);
  Var<T> d_fake = state.d.forward(constant(fake_detached));
  Var<T> loss_d = add(mean_all(softplus_v(neg(d_real))), mean_all(softplus_v(d_fake)));
  const bool r1_due = state.cfg.r1_gamma > 0 && state.step % state.cfg.r1_interval == 0;
  if (r1_due) {
    auto gr = grad(sum_all(d_real), {real_leaf}, /*create_graph=*/true);
    Var<T> penalty = scale(sum_all(square(gr[0])),
                           0.5 * state.cfg.r1_gamma / static_cast<double>(n));
    loss_d = add(loss_d, scale(penalty, static_cast<double>(state.cfg.r1_interval)));
  }
  report.d_loss = detail::loss_value(loss_d, "discriminator loss", state.step);
  state.opt_d.zero_grad();
  backward(loss_d);
  state.opt_d.step();

  // Generator step.
  Var<T> fake = state.g.synthesize(state.g.map_latents(plan), state.step);
  check_finite(fake.value(), "generated images", state.step);
  Var<T> adv = mean_all(softplus_v(neg(state.d.forward(fake))));
  BatchLossResult<T> closs = batch_contrastive_loss(fake, plan, state.closs, embed);
  report.adv_loss = detail::loss_value(adv, "generator adversarial loss", state.step);
  report.id_part = detail::loss_value(closs.id_part, "contrastive id part", state.step);
  report.app_part = detail::loss_value(closs.app_part, "contrastive appearance part", state.step);
  Var<T> loss_g = add(adv, closs.total);
  report.total = detail::loss_value(loss_g, "generator total loss", state.step);
  state.opt_g.zero_grad();
  backward(loss_g);
  state.opt_g.step();

  state.step += 1;
  return report;
}

}  // namespace ridgegen
