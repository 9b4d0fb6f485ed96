#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ridgegen/latent.hpp"

using namespace ridgegen;

TEST_CASE("sample_latent produces the configured dimensions") {
  Rng rng(51);
  auto z = sample_latent(rng, {256, 256});
  CHECK(z.z_id.size() == 256);
  CHECK(z.z_app.size() == 256);
  CHECK(z.full().size() == 512);
  // Concatenation order: identity part first.
  CHECK(z.full()[0] == z.z_id[0]);
  CHECK(z.full()[256] == z.z_app[0]);
}

TEST_CASE("sample_latent is deterministic per seed") {
  Rng r1(52), r2(52);
  auto a = sample_latent(r1, {8, 8});
  auto b = sample_latent(r2, {8, 8});
  CHECK(a.z_id == b.z_id);
  CHECK(a.z_app == b.z_app);
}

TEST_CASE("sample_latent rejects non-positive dimensions") {
  Rng rng(53);
  CHECK_THROWS_AS(sample_latent(rng, {0, 8}), config_error);
  CHECK_THROWS_AS(sample_latent(rng, {8, -1}), config_error);
}

TEST_CASE("sampled coordinates follow a standard normal") {
  Rng rng(54);
  const int n = 10000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    auto z = sample_latent(rng, {4, 4});
    for (double v : z.full()) {
      sum += v;
      sum2 += v * v;
    }
  }
  const double count = n * 8.0;
  const double mean = sum / count;
  const double var = sum2 / count - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("make_training_batch with full pairing fills every slot") {
  Rng rng(55);
  auto plan = make_training_batch(rng, 8, 2, 2, {16, 16});
  CHECK(plan.size() == 8);
  CHECK(plan.relations.size() == 4);
  verify_batch_plan(plan);
}

TEST_CASE("make_training_batch with no pairs is fully independent") {
  Rng rng(56);
  auto plan = make_training_batch(rng, 8, 0, 0, {16, 16});
  CHECK(plan.size() == 8);
  CHECK(plan.relations.empty());
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = i + 1; j < 8; ++j) CHECK(relation_of(plan, i, j) == Relation::independent);
}

TEST_CASE("make_training_batch rejects infeasible pairing") {
  Rng rng(57);
  CHECK_THROWS_AS(make_training_batch(rng, 6, 2, 2, {16, 16}), config_error);
}

TEST_CASE("same_id pairs share z_id exactly and differ in z_app") {
  Rng rng(58);
  auto plan = make_training_batch(rng, 16, 4, 4, {32, 32});
  int same_id_count = 0, same_app_count = 0;
  for (const auto& r : plan.relations) {
    const auto& a = plan.latents[r.index_a];
    const auto& b = plan.latents[r.index_b];
    if (r.kind == PairKind::same_id) {
      ++same_id_count;
      CHECK(a.z_id == b.z_id);
      CHECK(a.z_app != b.z_app);
    } else {
      ++same_app_count;
      CHECK(a.z_app == b.z_app);
      CHECK(a.z_id != b.z_id);
    }
  }
  CHECK(same_id_count == 4);
  CHECK(same_app_count == 4);
  // No independent pair shares a sub-vector.
  for (int64_t i = 0; i < plan.size(); ++i)
    for (int64_t j = i + 1; j < plan.size(); ++j) {
      if (relation_of(plan, i, j) != Relation::independent) continue;
      CHECK(plan.latents[i].z_id != plan.latents[j].z_id);
      CHECK(plan.latents[i].z_app != plan.latents[j].z_app);
    }
}

TEST_CASE("relation_of is symmetric and validates indices") {
  Rng rng(59);
  auto plan = make_training_batch(rng, 8, 2, 1, {8, 8});
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      if (i == j) continue;
      CHECK(relation_of(plan, i, j) == relation_of(plan, j, i));
    }
  CHECK(relation_of(plan, 0, 1) == Relation::same_id);
  CHECK(relation_of(plan, 4, 5) == Relation::same_app);
  CHECK_THROWS_AS(relation_of(plan, 0, 0), usage_error);
  CHECK_THROWS_AS(relation_of(plan, -1, 2), usage_error);
  CHECK_THROWS_AS(relation_of(plan, 0, 8), usage_error);
}

TEST_CASE("scanning latent equality reconstructs the declared relations") {
  Rng rng(60);
  auto plan = make_training_batch(rng, 12, 3, 2, {16, 16});
  std::vector<PairRelation> rebuilt;
  for (int64_t i = 0; i < plan.size(); ++i)
    for (int64_t j = i + 1; j < plan.size(); ++j) {
      if (plan.latents[i].z_id == plan.latents[j].z_id)
        rebuilt.push_back({i, j, PairKind::same_id});
      else if (plan.latents[i].z_app == plan.latents[j].z_app)
        rebuilt.push_back({i, j, PairKind::same_app});
    }
  REQUIRE(rebuilt.size() == plan.relations.size());
  for (size_t k = 0; k < rebuilt.size(); ++k) {
    CHECK(rebuilt[k].index_a == plan.relations[k].index_a);
    CHECK(rebuilt[k].index_b == plan.relations[k].index_b);
    CHECK(rebuilt[k].kind == plan.relations[k].kind);
  }
}

TEST_CASE("batch plan survives a json round trip") {
  Rng rng(61);
  auto plan = make_training_batch(rng, 6, 1, 1, {4, 4});
  auto j = batch_plan_to_json(plan);
  auto back = batch_plan_from_json(j);
  REQUIRE(back.size() == plan.size());
  for (int64_t i = 0; i < plan.size(); ++i) {
    CHECK(back.latents[i].z_id == plan.latents[i].z_id);
    CHECK(back.latents[i].z_app == plan.latents[i].z_app);
  }
  REQUIRE(back.relations.size() == plan.relations.size());
  verify_batch_plan(back);
  // Corrupt a shared sub-vector; verification must notice.
  back.latents[back.relations[0].index_b].z_id[0] += 1.0;
  CHECK_THROWS_AS(verify_batch_plan(back), integrity_error);
}

TEST_CASE("pack helpers stack sub-vectors row-wise") {
  Rng rng(62);
  auto plan = make_training_batch(rng, 4, 1, 0, {3, 5});
  auto zi = pack_z_id<double>(plan);
  auto za = pack_z_app<double>(plan);
  REQUIRE(zi.shape() == Shape{4, 3});
  REQUIRE(za.shape() == Shape{4, 5});
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t k = 0; k < 3; ++k) CHECK(zi.at2(i, k) == plan.latents[i].z_id[k]);
    for (int64_t k = 0; k < 5; ++k) CHECK(za.at2(i, k) == plan.latents[i].z_app[k]);
  }
  // Shared identity shows up as equal rows.
  for (int64_t k = 0; k < 3; ++k) CHECK(zi.at2(0, k) == zi.at2(1, k));
}
