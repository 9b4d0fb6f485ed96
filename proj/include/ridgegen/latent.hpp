#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "ridgegen/rng.hpp"
#include "ridgegen/tensor.hpp"

namespace ridgegen {

// Latent space factored into an identity part and an appearance part. The
// full latent is always the concatenation [z_id, z_app].

struct LatentDims {
  int64_t d_id = 256;
  int64_t d_app = 256;

  void validate() const {
    check_config(d_id > 0 && d_app > 0, "latent dims must be positive");
  }
};

struct DisentangledLatent {
  std::vector<double> z_id;
  std::vector<double> z_app;

  std::vector<double> full() const {
    std::vector<double> out;
    out.reserve(z_id.size() + z_app.size());
    out.insert(out.end(), z_id.begin(), z_id.end());
    out.insert(out.end(), z_app.begin(), z_app.end());
    return out;
  }
};

enum class PairKind { same_id, same_app };
enum class Relation { same_id, same_app, independent };

struct PairRelation {
  int64_t index_a = 0;
  int64_t index_b = 0;
  PairKind kind = PairKind::same_id;
};

struct BatchPlan {
  std::vector<DisentangledLatent> latents;
  std::vector<PairRelation> relations;

  int64_t size() const { return static_cast<int64_t>(latents.size()); }
};

inline DisentangledLatent sample_latent(Rng& rng, const LatentDims& dims) {
  dims.validate();
  DisentangledLatent z;
  z.z_id.resize(dims.d_id);
  z.z_app.resize(dims.d_app);
  for (auto& v : z.z_id) v = rng.normal();
  for (auto& v : z.z_app) v = rng.normal();
  return z;
}

// Builds a batch with the requested number of same-id and same-app pairs.
// Pairs occupy the leading slots ((0,1), (2,3), ...: same-id first, then
// same-app); remaining slots hold fully independent latents. No slot
// participates in two relations.
inline BatchPlan make_training_batch(Rng& rng, int64_t batch_size, int64_t num_same_id_pairs,
                                     int64_t num_same_app_pairs,
                                     const LatentDims& dims = LatentDims{}) {
  dims.validate();
  check_config(batch_size >= 0 && num_same_id_pairs >= 0 && num_same_app_pairs >= 0,
               "make_training_batch: negative count");
  check_config(2 * (num_same_id_pairs + num_same_app_pairs) <= batch_size,
               "make_training_batch: pairing needs " +
                   std::to_string(2 * (num_same_id_pairs + num_same_app_pairs)) +
                   " slots but batch size is " + std::to_string(batch_size));
  BatchPlan plan;
  plan.latents.reserve(batch_size);
  for (int64_t p = 0; p < num_same_id_pairs; ++p) {
    DisentangledLatent a = sample_latent(rng, dims);
    DisentangledLatent b = sample_latent(rng, dims);
    b.z_id = a.z_id;  // share identity, keep appearances distinct
    const int64_t base = static_cast<int64_t>(plan.latents.size());
    plan.latents.push_back(std::move(a));
    plan.latents.push_back(std::move(b));
    plan.relations.push_back({base, base + 1, PairKind::same_id});
  }
  for (int64_t p = 0; p < num_same_app_pairs; ++p) {
    DisentangledLatent a = sample_latent(rng, dims);
    DisentangledLatent b = sample_latent(rng, dims);
    b.z_app = a.z_app;  // share appearance, keep identities distinct
    const int64_t base = static_cast<int64_t>(plan.latents.size());
    plan.latents.push_back(std::move(a));
    plan.latents.push_back(std::move(b));
    plan.relations.push_back({base, base + 1, PairKind::same_app});
  }
  while (static_cast<int64_t>(plan.latents.size()) < batch_size)
    plan.latents.push_back(sample_latent(rng, dims));
  return plan;
}

inline Relation relation_of(const BatchPlan& plan, int64_t i, int64_t j) {
  check_usage(i >= 0 && j >= 0 && i < plan.size() && j < plan.size(),
              "relation_of: index out of range");
  check_usage(i != j, "relation_of: a slot has no relation with itself");
  for (const auto& r : plan.relations) {
    if ((r.index_a == i && r.index_b == j) || (r.index_a == j && r.index_b == i))
      return r.kind == PairKind::same_id ? Relation::same_id : Relation::same_app;
  }
  return Relation::independent;
}

// Consistency check: every declared relation must hold element-wise in the
// latents, no slot may appear in two relations, and indices must be valid.
inline void verify_batch_plan(const BatchPlan& plan) {
  std::vector<int> used(plan.latents.size(), 0);
  for (const auto& r : plan.relations) {
    check_integrity(r.index_a >= 0 && r.index_b >= 0 && r.index_a < plan.size() &&
                        r.index_b < plan.size() && r.index_a != r.index_b,
                    "batch plan: relation indices invalid");
    used[r.index_a]++;
    used[r.index_b]++;
    const auto& a = plan.latents[r.index_a];
    const auto& b = plan.latents[r.index_b];
    if (r.kind == PairKind::same_id) {
      check_integrity(a.z_id == b.z_id, "batch plan: same_id pair with differing z_id");
      check_integrity(a.z_app != b.z_app, "batch plan: same_id pair with shared z_app");
    } else {
      check_integrity(a.z_app == b.z_app, "batch plan: same_app pair with differing z_app");
      check_integrity(a.z_id != b.z_id, "batch plan: same_app pair with shared z_id");
    }
  }
  for (int u : used)
    check_integrity(u <= 1, "batch plan: a slot participates in two relations");
}

// Stacks the identity (or appearance) sub-vectors into a [N, D] matrix.
template <typename T>
Tensor<T> pack_z_id(const BatchPlan& plan) {
  check_usage(!plan.latents.empty(), "pack_z_id: empty plan");
  const int64_t d = static_cast<int64_t>(plan.latents[0].z_id.size());
  Tensor<T> out({plan.size(), d});
  for (int64_t i = 0; i < plan.size(); ++i)
    for (int64_t k = 0; k < d; ++k)
      out.at2(i, k) = static_cast<T>(plan.latents[i].z_id[k]);
  return out;
}

template <typename T>
Tensor<T> pack_z_app(const BatchPlan& plan) {
  check_usage(!plan.latents.empty(), "pack_z_app: empty plan");
  const int64_t d = static_cast<int64_t>(plan.latents[0].z_app.size());
  Tensor<T> out({plan.size(), d});
  for (int64_t i = 0; i < plan.size(); ++i)
    for (int64_t k = 0; k < d; ++k)
      out.at2(i, k) = static_cast<T>(plan.latents[i].z_app[k]);
  return out;
}

inline nlohmann::json batch_plan_to_json(const BatchPlan& plan) {
  nlohmann::json j;
  j["latents"] = nlohmann::json::array();
  for (const auto& z : plan.latents)
    j["latents"].push_back({{"z_id", z.z_id}, {"z_app", z.z_app}});
  j["relations"] = nlohmann::json::array();
  for (const auto& r : plan.relations)
    j["relations"].push_back({{"a", r.index_a},
                              {"b", r.index_b},
                              {"kind", r.kind == PairKind::same_id ? "same_id" : "same_app"}});
  return j;
}

inline BatchPlan batch_plan_from_json(const nlohmann::json& j) {
  BatchPlan plan;
  for (const auto& z : j.at("latents")) {
    DisentangledLatent l;
    l.z_id = z.at("z_id").get<std::vector<double>>();
    l.z_app = z.at("z_app").get<std::vector<double>>();
    plan.latents.push_back(std::move(l));
  }
  for (const auto& r : j.at("relations")) {
    const std::string kind = r.at("kind").get<std::string>();
    check_integrity(kind == "same_id" || kind == "same_app",
                    "batch plan json: unknown relation kind " + kind);
    plan.relations.push_back({r.at("a").get<int64_t>(), r.at("b").get<int64_t>(),
                              kind == "same_id" ? PairKind::same_id : PairKind::same_app});
  }
  return plan;
}

}  // namespace ridgegen
