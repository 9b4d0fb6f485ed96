#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "ridgegen/generator.hpp"

using namespace ridgegen;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig cfg;
  cfg.resolution = 16;
  cfg.mapping_depth = 2;
  cfg.d_id = 8;
  cfg.d_app = 8;
  cfg.style_dim = 8;
  cfg.channels = {8, 8, 8};
  cfg.batch_size = 4;
  cfg.num_same_id_pairs = 1;
  cfg.num_same_app_pairs = 1;
  return cfg;
}

template <typename T>
bool values_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (!(a[i] == b[i])) return false;
  return true;
}

template <typename T>
Tensor<T> random_images(Rng& rng, int64_t n, int64_t res) {
  Tensor<T> out({n, 1, res, res});
  for (auto& v : out) v = static_cast<T>(rng.uniform());
  return out;
}

// Frozen random projection used as the embedding model in training tests.
template <typename T>
std::function<Var<T>(const Var<T>&)> projection_embed(int64_t res, int64_t dim, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> w = Tensor<T>::randn({res * res, dim}, rng);
  return [w, res](const Var<T>& images) {
    return matmul(reshape(images, {images.dim(0), res * res}), constant(w.clone()));
  };
}

// Constant one-hot embeddings: every pairwise identity distance is exactly 1.
template <typename T>
std::function<Var<T>(const Var<T>&)> one_hot_embed() {
  return [](const Var<T>& images) {
    const int64_t n = images.dim(0);
    Tensor<T> e = Tensor<T>::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) e.at2(i, i) = T(1);
    return constant(std::move(e));
  };
}

}  // namespace

TEST_CASE("generator config validation") {
  GeneratorConfig cfg = tiny_config();
  REQUIRE_NOTHROW(cfg.validate());

  GeneratorConfig bad = cfg;
  bad.resolution = 24;
  REQUIRE_THROWS_AS(bad.validate(), config_error);
  bad.resolution = 8;
  REQUIRE_THROWS_AS(bad.validate(), config_error);

  bad = cfg;
  bad.mapping_depth = 0;
  REQUIRE_THROWS_AS(bad.validate(), config_error);

  bad = cfg;
  bad.channels = {8, 8};  // 16 px needs three blocks
  REQUIRE_THROWS_AS(bad.validate(), config_error);

  bad = cfg;
  bad.num_same_id_pairs = 2;  // 2*(2+1) slots > batch of 4
  REQUIRE_THROWS_AS(bad.validate(), config_error);

  bad = cfg;
  bad.r1_interval = 0;
  REQUIRE_THROWS_AS(bad.validate(), config_error);

  bad = cfg;
  bad.lr = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("generator config json round trip") {
  GeneratorConfig cfg = tiny_config();
  cfg.use_noise = true;
  cfg.r1_gamma = 0.5;
  GeneratorConfig back = GeneratorConfig::from_json(cfg.to_json());
  REQUIRE(back.resolution == cfg.resolution);
  REQUIRE(back.mapping_depth == cfg.mapping_depth);
  REQUIRE(back.d_id == cfg.d_id);
  REQUIRE(back.d_app == cfg.d_app);
  REQUIRE(back.style_dim == cfg.style_dim);
  REQUIRE(back.channels == cfg.channels);
  REQUIRE(back.lr == cfg.lr);
  REQUIRE(back.mapping_lr_mul == cfg.mapping_lr_mul);
  REQUIRE(back.batch_size == cfg.batch_size);
  REQUIRE(back.num_same_id_pairs == cfg.num_same_id_pairs);
  REQUIRE(back.num_same_app_pairs == cfg.num_same_app_pairs);
  REQUIRE(back.total_steps == cfg.total_steps);
  REQUIRE(back.r1_gamma == cfg.r1_gamma);
  REQUIRE(back.r1_interval == cfg.r1_interval);
  REQUIRE(back.use_noise == cfg.use_noise);

  REQUIRE(GeneratorConfig{}.resolved_channels() ==
          std::vector<int64_t>{128, 64, 32, 16, 16});
}

TEST_CASE("map_latents routes subvectors into style halves") {
  GeneratorConfig cfg = tiny_config();
  Rng init_rng(5);
  Generator<double> g(cfg, init_rng);

  Rng rng(17);
  BatchPlan plan = make_training_batch(rng, 6, 1, 1, LatentDims{cfg.d_id, cfg.d_app});
  Var<double> style = g.map_latents(plan);

  REQUIRE(style.shape() == Shape{6, 2 * cfg.style_dim});

  // Slots 0 and 1 share z_id: identical identity halves, differing app halves.
  bool app_differs = false;
  for (int64_t k = 0; k < cfg.style_dim; ++k) {
    REQUIRE(style.value().at2(0, k) == style.value().at2(1, k));
    if (style.value().at2(0, cfg.style_dim + k) != style.value().at2(1, cfg.style_dim + k))
      app_differs = true;
  }
  REQUIRE(app_differs);

  // Slots 2 and 3 share z_app: identical appearance halves, differing id halves.
  bool id_differs = false;
  for (int64_t k = 0; k < cfg.style_dim; ++k) {
    REQUIRE(style.value().at2(2, cfg.style_dim + k) == style.value().at2(3, cfg.style_dim + k));
    if (style.value().at2(2, k) != style.value().at2(3, k)) id_differs = true;
  }
  REQUIRE(id_differs);

  // Determinism: mapping the same plan twice is bit-identical.
  REQUIRE(values_equal(style.value(), g.map_latents(plan).value()));

  Var<double> z_id = constant(pack_z_id<double>(plan));
  Var<double> z_app = constant(pack_z_app<double>(plan));
  Var<double> bad_rows = constant(Tensor<double>::zeros({3, cfg.d_app}));
  REQUIRE_THROWS_AS(g.map_latents(z_id, bad_rows), usage_error);
  Var<double> bad_dim = constant(Tensor<double>::zeros({6, cfg.d_app + 1}));
  REQUIRE_THROWS_AS(g.map_latents(z_id, bad_dim), usage_error);
  REQUIRE_THROWS_AS(Generator<double>().map_latents(z_id, z_app), usage_error);
}

TEST_CASE("synthesize is deterministic with correct shape and range") {
  GeneratorConfig cfg = tiny_config();
  Rng init_rng(9);
  Generator<float> g(cfg, init_rng);

  Rng rng(21);
  Var<float> style = constant(Tensor<float>::randn({3, 2 * cfg.style_dim}, rng));
  Var<float> a = g.synthesize(style, 0);
  Var<float> b = g.synthesize(style, 0);

  REQUIRE(a.shape() == Shape{3, 1, 16, 16});
  REQUIRE(values_equal(a.value(), b.value()));

  // Range scan over random styles: tanh squashing keeps outputs in [0, 1].
  for (int trial = 0; trial < 100; ++trial) {
    Var<float> s = constant(Tensor<float>::randn({2, 2 * cfg.style_dim}, rng));
    Tensor<float> img = g.synthesize(s, 0).value();
    for (float v : img) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }

  Var<float> bad = constant(Tensor<float>::zeros({2, 2 * cfg.style_dim + 1}));
  REQUIRE_THROWS_AS(g.synthesize(bad, 0), usage_error);
}

TEST_CASE("noise injection is seed-deterministic and off by default") {
  GeneratorConfig cfg = tiny_config();
  cfg.use_noise = true;
  Rng init_rng(31);
  Generator<float> g(cfg, init_rng);

  Rng rng(32);
  Var<float> style = constant(Tensor<float>::randn({2, 2 * cfg.style_dim}, rng));

  // Noise weights start at zero, so the seed has no effect yet.
  REQUIRE(values_equal(g.synthesize(style, 1).value(), g.synthesize(style, 2).value()));

  for (Var<float>& w : g.noise_weights())
    w.mutable_value() = Tensor<float>::full({1, 1}, 0.5f);
  REQUIRE(values_equal(g.synthesize(style, 1).value(), g.synthesize(style, 1).value()));
  REQUIRE_FALSE(values_equal(g.synthesize(style, 1).value(), g.synthesize(style, 2).value()));

  // With use_noise=false the seed never matters, even with nonzero weights.
  GeneratorConfig off = tiny_config();
  Rng init2(31);
  Generator<float> g2(off, init2);
  for (Var<float>& w : g2.noise_weights())
    w.mutable_value() = Tensor<float>::full({1, 1}, 0.5f);
  REQUIRE(values_equal(g2.synthesize(style, 1).value(), g2.synthesize(style, 2).value()));
}

TEST_CASE("appearance loss reaches the id mapping only through the image") {
  GeneratorConfig cfg = tiny_config();
  cfg.d_id = 8;
  cfg.d_app = 8;
  cfg.style_dim = 64;  // app half reshapes to an 8x8 mock image
  Rng init_rng(41);
  Generator<double> g(cfg, init_rng);

  Rng rng(42);
  BatchPlan plan = make_training_batch(rng, 4, 1, 1, LatentDims{cfg.d_id, cfg.d_app});
  Var<double> style = g.map_latents(plan);

  // Wide push thresholds keep the different-key hinges active, so the
  // nonzero-gradient checks below cannot pass vacuously.
  ContrastiveConfig closs;
  closs.filter = AppearanceFilterConfig::for_source(8, 8);
  closs.tau_minus_id = 1.9;
  closs.tau_minus_app = 10.0;

  SECTION("mock image built from the appearance half only") {
    Var<double> mock = reshape(slice_cols(style, cfg.style_dim, cfg.style_dim), {4, 1, 8, 8});
    BatchLossResult<double> out =
        batch_contrastive_loss(mock, plan, closs, one_hot_embed<double>());

    auto id_params = g.mapping_id_params();
    auto grads = grad(out.app_part, id_params);
    for (const auto& gr : grads)
      for (double v : gr.value()) REQUIRE(v == 0.0);

    auto app_params = g.mapping_app_params();
    auto app_grads = grad(out.app_part, app_params);
    bool any_nonzero = false;
    for (const auto& gr : app_grads)
      for (double v : gr.value())
        if (v != 0.0) any_nonzero = true;
    REQUIRE(any_nonzero);
  }

  SECTION("mock image built from the identity half only") {
    Var<double> mock = reshape(slice_cols(style, 0, cfg.style_dim), {4, 1, 8, 8});
    std::function<Var<double>(const Var<double>&)> embed_flat = [](const Var<double>& images) {
      return reshape(images, {images.dim(0), 64});
    };
    BatchLossResult<double> out = batch_contrastive_loss(mock, plan, closs, embed_flat);

    auto app_params = g.mapping_app_params();
    auto grads = grad(out.id_part, app_params);
    for (const auto& gr : grads)
      for (double v : gr.value()) REQUIRE(v == 0.0);

    auto id_params = g.mapping_id_params();
    auto id_grads = grad(out.id_part, id_params);
    bool any_nonzero = false;
    for (const auto& gr : id_grads)
      for (double v : gr.value())
        if (v != 0.0) any_nonzero = true;
    REQUIRE(any_nonzero);
  }
}

TEST_CASE("gan checkpoint round trip preserves training exactly") {
  GeneratorConfig cfg = tiny_config();
  ContrastiveConfig closs;
  closs.filter = AppearanceFilterConfig::for_source(16, 16);
  GanState<float> state = GanState<float>::init(cfg, closs, 11);
  auto embed = projection_embed<float>(16, 8, 99);

  Rng data_rng(55);
  for (int i = 0; i < 3; ++i) {
    BatchPlan plan = state.next_plan();
    gan_train_step(state, plan, random_images<float>(data_rng, cfg.batch_size, 16), embed);
  }

  const auto path = std::filesystem::temp_directory_path() / "ridgegen_gan_roundtrip.ckpt";
  state.save(path);
  GanState<float> loaded = GanState<float>::load(path);

  REQUIRE(loaded.step == state.step);
  REQUIRE(loaded.opt_g.step_count() == state.opt_g.step_count());
  REQUIRE(loaded.opt_d.step_count() == state.opt_d.step_count());
  REQUIRE(loaded.cfg.resolution == cfg.resolution);
  REQUIRE(loaded.closs.w_app == closs.w_app);

  // Probe synthesis is bit-identical.
  Rng probe_rng(70);
  Var<float> style = constant(Tensor<float>::randn({4, 2 * cfg.style_dim}, probe_rng));
  REQUIRE(values_equal(state.g.synthesize(style, 3).value(),
                       loaded.g.synthesize(style, 3).value()));

  // Training continues identically: same plans from the restored rng, same
  // real data, same reports, same parameters.
  Tensor<float> real_a = random_images<float>(data_rng, cfg.batch_size, 16);
  Tensor<float> real_b = random_images<float>(data_rng, cfg.batch_size, 16);
  for (const Tensor<float>& real : {real_a, real_b}) {
    BatchPlan plan_orig = state.next_plan();
    BatchPlan plan_load = loaded.next_plan();
    StepReport r1 = gan_train_step(state, plan_orig, real, embed);
    StepReport r2 = gan_train_step(loaded, plan_load, real, embed);
    REQUIRE(r1.adv_loss == r2.adv_loss);
    REQUIRE(r1.d_loss == r2.d_loss);
    REQUIRE(r1.id_part == r2.id_part);
    REQUIRE(r1.app_part == r2.app_part);
    REQUIRE(r1.total == r2.total);
  }
  auto pa = state.g.params();
  auto pb = loaded.g.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) REQUIRE(values_equal(pa[i].value(), pb[i].value()));
  auto da = state.d.params();
  auto db = loaded.d.params();
  for (size_t i = 0; i < da.size(); ++i) REQUIRE(values_equal(da[i].value(), db[i].value()));

  std::filesystem::remove(path);
}

TEST_CASE("loading a checkpoint of the wrong kind fails") {
  const auto path = std::filesystem::temp_directory_path() / "ridgegen_wrong_kind.ckpt";
  CheckpointWriter w("recognizer", nlohmann::json::object(), 0);
  w.write(path);
  REQUIRE_THROWS_AS(GanState<float>::load(path), integrity_error);
  std::filesystem::remove(path);
}

TEST_CASE("zeroed contrastive loss reproduces the pure adversarial update") {
  GeneratorConfig cfg = tiny_config();
  cfg.num_same_id_pairs = 0;
  cfg.num_same_app_pairs = 0;
  cfg.r1_gamma = 0.0;

  // One-hot embeddings give distance exactly 1 for every pair; with no
  // same-id pairs and tau_minus_id = 1 every hinge term is exactly zero, and
  // w_app = 0 removes the appearance term from the gradient.
  ContrastiveConfig closs;
  closs.w_app = 0.0;
  closs.tau_plus_id = 0.1;
  closs.tau_minus_id = 1.0;
  closs.filter = AppearanceFilterConfig::for_source(16, 16);

  GanState<double> with_loss = GanState<double>::init(cfg, closs, 77);
  GanState<double> manual = GanState<double>::init(cfg, closs, 77);

  Rng plan_rng(80);
  BatchPlan plan = make_training_batch(plan_rng, cfg.batch_size, 0, 0,
                                       LatentDims{cfg.d_id, cfg.d_app});
  Rng data_rng(81);
  Tensor<double> real = random_images<double>(data_rng, cfg.batch_size, 16);

  StepReport report = gan_train_step(with_loss, plan, real, one_hot_embed<double>());
  REQUIRE(report.id_part == 0.0);
  REQUIRE(report.total == report.adv_loss);

  // Manual replica: the same discriminator update, then a generator update
  // from the adversarial loss alone.
  {
    Tensor<double> fake_detached;
    {
      NoGradGuard ng;
      fake_detached = manual.g.synthesize(manual.g.map_latents(plan), 0).value();
    }
    Var<double> real_leaf = param(real.clone());
    Var<double> loss_d = add(mean_all(softplus_v(neg(manual.d.forward(real_leaf)))),
                             mean_all(softplus_v(manual.d.forward(constant(fake_detached)))));
    manual.opt_d.zero_grad();
    backward(loss_d);
    manual.opt_d.step();

    Var<double> fake = manual.g.synthesize(manual.g.map_latents(plan), 0);
    Var<double> adv = mean_all(softplus_v(neg(manual.d.forward(fake))));
    REQUIRE(report.adv_loss == adv.value()[0]);
    manual.opt_g.zero_grad();
    backward(adv);
    manual.opt_g.step();
  }

  auto pa = with_loss.g.params();
  auto pb = manual.g.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto& a = pa[i].value();
    const auto& b = pb[i].value();
    REQUIRE(a.shape() == b.shape());
    for (int64_t j = 0; j < a.numel(); ++j) REQUIRE(a[j] == b[j]);
  }
}

TEST_CASE("loss report satisfies the bookkeeping identity") {
  GeneratorConfig cfg = tiny_config();
  ContrastiveConfig closs;
  closs.filter = AppearanceFilterConfig::for_source(16, 16);
  GanState<float> state = GanState<float>::init(cfg, closs, 13);
  auto embed = projection_embed<float>(16, 8, 14);

  Rng data_rng(15);
  for (int i = 0; i < 3; ++i) {
    BatchPlan plan = state.next_plan();
    StepReport r =
        gan_train_step(state, plan, random_images<float>(data_rng, cfg.batch_size, 16), embed);
    REQUIRE(std::isfinite(r.d_loss));
    REQUIRE(r.total == Catch::Approx(r.adv_loss + r.id_part + closs.w_app * r.app_part)
                           .epsilon(1e-4));
  }
  REQUIRE(state.step == 3);
}

TEST_CASE("non-finite losses surface as training faults naming the step") {
  GeneratorConfig cfg = tiny_config();
  ContrastiveConfig closs;
  closs.filter = AppearanceFilterConfig::for_source(16, 16);
  GanState<float> state = GanState<float>::init(cfg, closs, 23);
  state.step = 7;

  auto params = state.g.params();
  Tensor<float> poisoned = params[0].value().clone();
  poisoned[0] = std::numeric_limits<float>::quiet_NaN();
  params[0].mutable_value() = poisoned;

  Rng data_rng(24);
  BatchPlan plan = state.next_plan();
  Tensor<float> real = random_images<float>(data_rng, cfg.batch_size, 16);
  try {
    gan_train_step(state, plan, real, projection_embed<float>(16, 8, 25));
    FAIL("expected a training fault");
  } catch (const training_fault& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("at step 7") != std::string::npos);
    REQUIRE(msg.find("non-finite") != std::string::npos);
  }

  Tensor<float> wrong_n = random_images<float>(data_rng, cfg.batch_size + 1, 16);
  REQUIRE_THROWS_AS(
      gan_train_step(state, plan, wrong_n, projection_embed<float>(16, 8, 25)),
      usage_error);
}

TEST_CASE("short adversarial run keeps losses finite and bounded") {
  GeneratorConfig cfg;
  cfg.resolution = 32;
  cfg.mapping_depth = 2;
  cfg.d_id = 16;
  cfg.d_app = 16;
  cfg.style_dim = 16;
  cfg.channels = {32, 16, 12, 8};
  cfg.batch_size = 8;
  cfg.num_same_id_pairs = 1;
  cfg.num_same_app_pairs = 1;
  cfg.validate();

  ContrastiveConfig closs;
  closs.filter = AppearanceFilterConfig::for_source(32, 32);
  GanState<float> state = GanState<float>::init(cfg, closs, 3);
  auto embed = projection_embed<float>(32, 16, 4);

  // Two-identity toy data: each identity is a fixed base pattern observed
  // under small perturbations.
  Rng data_rng(6);
  Tensor<float> base_a = random_images<float>(data_rng, 1, 32);
  Tensor<float> base_b = random_images<float>(data_rng, 1, 32);
  auto draw_real = [&](int64_t n) {
    Tensor<float> out({n, 1, 32, 32});
    for (int64_t i = 0; i < n; ++i) {
      const Tensor<float>& base = data_rng.uniform() < 0.5 ? base_a : base_b;
      for (int64_t j = 0; j < 32 * 32; ++j) {
        float v = base[j] + 0.05f * static_cast<float>(data_rng.normal());
        out[i * 32 * 32 + j] = std::min(1.0f, std::max(0.0f, v));
      }
    }
    return out;
  };

  for (int i = 0; i < 200; ++i) {
    BatchPlan plan = state.next_plan();
    StepReport r = gan_train_step(state, plan, draw_real(cfg.batch_size), embed);
    REQUIRE(std::abs(r.d_loss) < 100.0);
    REQUIRE(std::abs(r.total) < 100.0);
  }
  REQUIRE(state.step == 200);
  for (const auto& p : state.g.params()) REQUIRE(p.value().all_finite());
  for (const auto& p : state.d.params()) REQUIRE(p.value().all_finite());
}
