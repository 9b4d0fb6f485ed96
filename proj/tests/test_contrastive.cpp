#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "ridgegen/contrastive.hpp"

using namespace ridgegen;
using ridgegen::testing::check_gradients;
using V = Var<double>;

namespace {

ContrastiveConfig small_cfg() {
  ContrastiveConfig cfg;
  cfg.filter = {4, 4, 1.0, 3};
  return cfg;
}

// Fixed random projection used as a stand-in embedding model.
std::function<V(const V&)> mock_embedder(int64_t h, int64_t w, int64_t e, uint64_t seed) {
  Rng rng(seed);
  auto wmat = Tensor<double>::randn({h * w, e}, rng);
  return [wmat, h, w](const V& images) {
    return matmul(reshape(images, {images.dim(0), h * w}), constant(wmat));
  };
}

// Plain-loop pairwise summation over the same primitives.
struct OracleParts {
  double id_part = 0, app_part = 0, total = 0;
};

OracleParts oracle_loss(const BatchPlan& plan, const Tensor<double>& images,
                        const Tensor<double>& wmat, const ContrastiveConfig& cfg) {
  const int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3), e = wmat.dim(1);
  std::vector<std::vector<double>> emb(n, std::vector<double>(e, 0.0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < e; ++k)
      for (int64_t p = 0; p < h * w; ++p)
        emb[i][k] += images[i * h * w + p] * wmat.at2(p, k);
  std::vector<Tensor<double>> imgs;
  for (int64_t i = 0; i < n; ++i) {
    Tensor<double> img({h, w});
    std::copy(images.data() + i * h * w, images.data() + (i + 1) * h * w, img.data());
    imgs.push_back(std::move(img));
  }
  OracleParts out;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const Relation rel = relation_of(plan, i, j);
      out.id_part += contrastive_term(id_distance(emb[i], emb[j]), rel == Relation::same_id,
                                      cfg.tau_plus_id, cfg.tau_minus_id, cfg.c_plus_id,
                                      cfg.c_minus_id);
      out.app_part += contrastive_term(appearance_distance(imgs[i], imgs[j], cfg.filter),
                                       rel == Relation::same_app, cfg.tau_plus_app,
                                       cfg.tau_minus_app, cfg.c_plus_app, cfg.c_minus_app);
    }
  out.total = out.id_part + cfg.w_app * out.app_part;
  return out;
}

}  // namespace

TEST_CASE("id_distance spans [0, 2] on canonical vectors") {
  CHECK(id_distance({1, 0}, {1, 0}) == Catch::Approx(0.0).margin(1e-15));
  CHECK(id_distance({1, 0}, {0, 1}) == Catch::Approx(1.0));
  CHECK(id_distance({1, 0}, {-1, 0}) == Catch::Approx(2.0));
  CHECK(id_distance({3, 0}, {7, 0}) == Catch::Approx(0.0).margin(1e-15));
  CHECK_THROWS_AS(id_distance({0, 0}, {1, 0}), usage_error);
  CHECK_THROWS_AS(id_distance({1, 0}, {1, 0, 0}), usage_error);
}

TEST_CASE("contrastive_term hinges at the thresholds") {
  CHECK(contrastive_term(0.1, true, 0.1, 0.5, 1, 1) == 0.0);
  CHECK(contrastive_term(0.5, false, 0.1, 0.5, 1, 1) == 0.0);
  CHECK(contrastive_term(0.3, true, 0.1, 0.5, 1, 1) == Catch::Approx(0.2));
  CHECK(contrastive_term(0.3, false, 0.1, 0.5, 1, 1) == Catch::Approx(0.2));
  CHECK(contrastive_term(0.05, true, 0.1, 0.5, 1, 1) == 0.0);
  CHECK(contrastive_term(0.7, false, 0.1, 0.5, 1, 1) == 0.0);
  // Normalizers divide the hinge.
  CHECK(contrastive_term(0.3, true, 0.1, 0.5, 4, 1) == Catch::Approx(0.05));
  CHECK_THROWS_AS(contrastive_term(0.3, true, 0.5, 0.1, 1, 1), config_error);
  CHECK_THROWS_AS(contrastive_term(0.3, true, 0.1, 0.5, 0, 1), config_error);
}

TEST_CASE("config validation enforces threshold ordering") {
  ContrastiveConfig cfg = small_cfg();
  CHECK_NOTHROW(cfg.validate());
  cfg.tau_plus_id = 0.6;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_cfg();
  cfg.w_app = -1;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = small_cfg();
  cfg.c_minus_app = 0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("batch loss matches the brute-force pairwise oracle") {
  Rng rng(71);
  const int64_t h = 8;
  auto plan = make_training_batch(rng, 6, 1, 1, {4, 4});
  Tensor<double> images({6, 1, h, h});
  for (auto& v : images) v = rng.uniform();
  ContrastiveConfig cfg = small_cfg();
  cfg.w_app = 20.0;

  Rng wrng(72);
  auto wmat = Tensor<double>::randn({h * h, 16}, wrng);
  auto embed = [&](const V& imgs) {
    return matmul(reshape(imgs, {imgs.dim(0), h * h}), constant(wmat));
  };

  auto result = batch_contrastive_loss<double>(constant(images), plan, cfg, embed);
  auto ref = oracle_loss(plan, images, wmat, cfg);
  CHECK(result.id_part.value()[0] == Catch::Approx(ref.id_part).epsilon(1e-9));
  CHECK(result.app_part.value()[0] == Catch::Approx(ref.app_part).epsilon(1e-9));
  CHECK(result.total.value()[0] == Catch::Approx(ref.total).epsilon(1e-9));
}

TEST_CASE("perturbing relation labels changes exactly the affected terms") {
  Rng rng(73);
  const int64_t h = 8;
  auto plan = make_training_batch(rng, 6, 1, 1, {4, 4});
  Tensor<double> images({6, 1, h, h});
  for (auto& v : images) v = rng.uniform();
  ContrastiveConfig cfg = small_cfg();
  Rng wrng(74);
  auto wmat = Tensor<double>::randn({h * h, 16}, wrng);

  auto ref = oracle_loss(plan, images, wmat, cfg);
  // Flip the same_id pair into a same_app pair (latents untouched: the loss
  // reads relations, not latents).
  BatchPlan flipped = plan;
  flipped.relations[0].kind = PairKind::same_app;
  auto ref2 = oracle_loss(flipped, images, wmat, cfg);

  auto embed = [&](const V& imgs) {
    return matmul(reshape(imgs, {imgs.dim(0), h * h}), constant(wmat));
  };
  auto r1 = batch_contrastive_loss<double>(constant(images), plan, cfg, embed);
  auto r2 = batch_contrastive_loss<double>(constant(images), flipped, cfg, embed);
  CHECK(r1.total.value()[0] == Catch::Approx(ref.total).epsilon(1e-9));
  CHECK(r2.total.value()[0] == Catch::Approx(ref2.total).epsilon(1e-9));
  CHECK(r1.total.value()[0] != r2.total.value()[0]);
}

TEST_CASE("pair counts cover every unordered pair exactly once") {
  Rng rng(75);
  for (int64_t n : {4, 8, 16}) {
    auto plan = make_training_batch(rng, n, n / 4, n / 4, {4, 4});
    auto [id_same, id_diff] = ridgegen::detail::pair_masks<double>(plan, Relation::same_id);
    auto [app_same, app_diff] = ridgegen::detail::pair_masks<double>(plan, Relation::same_app);
    double total_id = 0, total_app = 0;
    for (int64_t i = 0; i < n * n; ++i) {
      total_id += id_same[i] + id_diff[i];
      total_app += app_same[i] + app_diff[i];
    }
    CHECK(total_id == n * (n - 1) / 2);
    CHECK(total_app == n * (n - 1) / 2);
  }
}

TEST_CASE("a batch inside both hinge-zero regions has zero loss") {
  // Plan: slots (0,1) same-id, (2,3) same-app, 4..5 independent.
  Rng rng(76);
  auto plan = make_training_batch(rng, 6, 1, 1, {4, 4});
  ContrastiveConfig cfg = small_cfg();

  // Images: constant value per slot; same-app pair shares its value so
  // d_app = 0, every other pair differs by at least 0.15 so d_app >= 0.02.
  const int64_t h = 8;
  const double values[6] = {0.0, 0.2, 0.45, 0.45, 0.7, 0.95};
  Tensor<double> images({6, 1, h, h});
  for (int64_t i = 0; i < 6; ++i)
    std::fill(images.data() + i * h * h, images.data() + (i + 1) * h * h, values[i]);

  // Embeddings: same-id pair shares a one-hot row, everyone else orthogonal,
  // so d_id = 0 inside the pair and 1 elsewhere.
  Tensor<double> emb({6, 8});
  const int64_t axis[6] = {0, 0, 1, 2, 3, 4};
  for (int64_t i = 0; i < 6; ++i) emb.at2(i, axis[i]) = 1.0;
  auto embed = [&](const V&) { return constant(emb.clone()); };

  auto result = batch_contrastive_loss<double>(constant(images), plan, cfg, embed);
  CHECK(result.total.value()[0] == 0.0);
  CHECK(result.id_part.value()[0] == 0.0);
  CHECK(result.app_part.value()[0] == 0.0);
}

TEST_CASE("w_app = 0 reduces the total to the id part exactly") {
  Rng rng(77);
  const int64_t h = 8;
  auto plan = make_training_batch(rng, 4, 1, 1, {4, 4});
  Tensor<double> images({4, 1, h, h});
  for (auto& v : images) v = rng.uniform();
  ContrastiveConfig cfg = small_cfg();
  cfg.w_app = 0.0;
  auto embed = mock_embedder(h, h, 8, 78);
  auto result = batch_contrastive_loss<double>(constant(images), plan, cfg, embed);
  CHECK(result.total.value()[0] == result.id_part.value()[0]);
  CHECK(result.app_part.value()[0] > 0.0);
}

TEST_CASE("increasing a same-id pair's distance never decreases the id part") {
  ContrastiveConfig cfg = small_cfg();
  double prev = -1;
  for (double d = 0.0; d <= 1.0; d += 0.05) {
    const double term =
        contrastive_term(d, true, cfg.tau_plus_id, cfg.tau_minus_id, cfg.c_plus_id,
                         cfg.c_minus_id);
    CHECK(term >= prev);
    prev = term;
  }
}

TEST_CASE("loss size mismatch with the plan is rejected") {
  Rng rng(79);
  auto plan = make_training_batch(rng, 4, 1, 0, {4, 4});
  Tensor<double> images({3, 1, 8, 8});
  auto embed = mock_embedder(8, 8, 8, 80);
  CHECK_THROWS_AS(batch_contrastive_loss<double>(constant(images), plan, small_cfg(), embed),
                  usage_error);
}

TEST_CASE("gradient of the total with respect to images matches finite differences") {
  Rng rng(81);
  const int64_t h = 8;
  auto plan = make_training_batch(rng, 4, 1, 1, {4, 4});
  V images = param(Tensor<double>({4, 1, h, h}));
  for (auto& v : images.mutable_value()) v = rng.uniform();
  ContrastiveConfig cfg = small_cfg();
  auto embed = mock_embedder(h, h, 8, 82);
  // Verify the batch is away from every hinge before differentiating.
  auto result = batch_contrastive_loss<double>(images, plan, cfg, embed);
  REQUIRE(result.total.value()[0] > 0);
  check_gradients({images},
                  [&] { return batch_contrastive_loss<double>(images, plan, cfg, embed).total; },
                  1e-6, 1e-3, 1e-8);
}
