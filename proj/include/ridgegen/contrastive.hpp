#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ridgegen/appearance.hpp"
#include "ridgegen/autodiff.hpp"
#include "ridgegen/latent.hpp"
#include "ridgegen/nn.hpp"

namespace ridgegen {

// Contrastive pulls/pushes on two distances: identity distance (1 - cosine
// similarity of recognition embeddings) and appearance distance (MSE of
// filtered images). Same-key pairs are pulled under tau_plus, different-key
// pairs pushed above tau_minus.

struct ContrastiveConfig {
  double tau_plus_id = 0.1;
  double tau_minus_id = 0.5;
  double tau_plus_app = 0.001;
  double tau_minus_app = 0.02;
  double c_plus_id = 1.0;
  double c_minus_id = 1.0;
  double c_plus_app = 1.0;
  double c_minus_app = 1.0;
  double w_app = 20.0;
  AppearanceFilterConfig filter;

  void validate() const {
    check_config(tau_plus_id >= 0 && tau_plus_app >= 0, "contrastive: thresholds must be >= 0");
    check_config(tau_plus_id < tau_minus_id, "contrastive: require tau_plus_id < tau_minus_id");
    check_config(tau_plus_app < tau_minus_app,
                 "contrastive: require tau_plus_app < tau_minus_app");
    check_config(c_plus_id > 0 && c_minus_id > 0 && c_plus_app > 0 && c_minus_app > 0,
                 "contrastive: normalizers must be positive");
    check_config(w_app >= 0, "contrastive: w_app must be >= 0");
    filter.validate();
  }

  nlohmann::json to_json() const {
    return {{"tau_plus_id", tau_plus_id},   {"tau_minus_id", tau_minus_id},
            {"tau_plus_app", tau_plus_app}, {"tau_minus_app", tau_minus_app},
            {"c_plus_id", c_plus_id},       {"c_minus_id", c_minus_id},
            {"c_plus_app", c_plus_app},     {"c_minus_app", c_minus_app},
            {"w_app", w_app},               {"filter", filter.to_json()}};
  }

  static ContrastiveConfig from_json(const nlohmann::json& j) {
    ContrastiveConfig cfg;
    cfg.tau_plus_id = j.value("tau_plus_id", cfg.tau_plus_id);
    cfg.tau_minus_id = j.value("tau_minus_id", cfg.tau_minus_id);
    cfg.tau_plus_app = j.value("tau_plus_app", cfg.tau_plus_app);
    cfg.tau_minus_app = j.value("tau_minus_app", cfg.tau_minus_app);
    cfg.c_plus_id = j.value("c_plus_id", cfg.c_plus_id);
    cfg.c_minus_id = j.value("c_minus_id", cfg.c_minus_id);
    cfg.c_plus_app = j.value("c_plus_app", cfg.c_plus_app);
    cfg.c_minus_app = j.value("c_minus_app", cfg.c_minus_app);
    cfg.w_app = j.value("w_app", cfg.w_app);
    if (j.contains("filter")) cfg.filter = AppearanceFilterConfig::from_json(j.at("filter"));
    return cfg;
  }
};

// 1 - cosine similarity, in [0, 2].
inline double id_distance(const std::vector<double>& a, const std::vector<double>& b) {
  check_usage(a.size() == b.size() && !a.empty(), "id_distance: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  check_usage(na > 0 && nb > 0, "id_distance: zero-norm embedding");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Per-pair hinge: pull same-key pairs under tau_plus, push different-key
// pairs above tau_minus.
inline double contrastive_term(double d, bool same_key, double tau_plus, double tau_minus,
                               double c_plus, double c_minus) {
  check_config(tau_plus < tau_minus, "contrastive_term: require tau_plus < tau_minus");
  check_config(c_plus > 0 && c_minus > 0, "contrastive_term: normalizers must be positive");
  if (same_key) return std::max(d - tau_plus, 0.0) / c_plus;
  return std::max(tau_minus - d, 0.0) / c_minus;
}

template <typename T>
struct BatchLossResult {
  Var<T> total;
  Var<T> id_part;
  Var<T> app_part;
};

namespace detail {

// Upper-triangular 0/1 masks selecting the same-key and different-key pairs
// for one distance kind. Unordered pairs are counted once.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> pair_masks(const BatchPlan& plan, Relation same_kind) {
  const int64_t n = plan.size();
  Tensor<T> same({n, n});
  Tensor<T> diff({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      if (relation_of(plan, i, j) == same_kind)
        same.at2(i, j) = T(1);
      else
        diff.at2(i, j) = T(1);
    }
  return {std::move(same), std::move(diff)};
}

// Hinged, masked, normalized sum of one branch pair.
template <typename T>
Var<T> hinge_part(const Var<T>& dist, const Tensor<T>& mask_same, const Tensor<T>& mask_diff,
                  double tau_plus, double tau_minus, double c_plus, double c_minus) {
  Var<T> pull = scale(mul(relu(add_scalar(dist, -tau_plus)), constant(mask_same.clone())),
                      1.0 / c_plus);
  Var<T> push = scale(mul(relu(add_scalar(neg(dist), tau_minus)), constant(mask_diff.clone())),
                      1.0 / c_minus);
  return sum_all(add(pull, push));
}

}  // namespace detail

// Pairwise identity distances from embeddings: D = 1 - cos(E_i, E_j).
template <typename T>
Var<T> id_distance_matrix(const Var<T>& embeddings) {
  const int64_t n = embeddings.dim(0);
  Var<T> e = l2_normalize_rows(embeddings);
  return add_scalar(neg(matmul(e, transpose(e))), 1.0);
}

// Pairwise appearance distances from filtered rows F [N, P]:
// D_ij = (|F_i|^2 + |F_j|^2 - 2 F_i.F_j) / P.
template <typename T>
Var<T> app_distance_matrix(const Var<T>& filtered) {
  const int64_t n = filtered.dim(0), p = filtered.dim(1);
  Var<T> r = sum_cols(square(filtered));  // [N,1]
  Var<T> s = matmul(filtered, transpose(filtered));
  Var<T> d = add(add(tile_cols(r, n), tile_rows(transpose(r), n)), scale(s, -2.0));
  return scale(d, 1.0 / static_cast<double>(p));
}

// Batch loss over all unordered pairs. The embedding model is a callable
// mapping [N,1,H,W] images to [N,E] embeddings; its parameters stay frozen
// (the caller must not register them with the optimizer) while gradients
// still flow through it into the images.
template <typename T>
BatchLossResult<T> batch_contrastive_loss(const Var<T>& images, const BatchPlan& plan,
                                          const ContrastiveConfig& cfg,
                                          const std::function<Var<T>(const Var<T>&)>& embed) {
  cfg.validate();
  check_usage(images.shape().size() == 4 && images.dim(0) == plan.size(),
              "batch_contrastive_loss: images and plan must correspond one-to-one");

  Var<T> d_id = id_distance_matrix(embed(images));
  Var<T> d_app = app_distance_matrix(filtered_batch(images, cfg.filter));

  auto [id_same, id_diff] = detail::pair_masks<T>(plan, Relation::same_id);
  auto [app_same, app_diff] = detail::pair_masks<T>(plan, Relation::same_app);

  BatchLossResult<T> out;
  out.id_part = detail::hinge_part(d_id, id_same, id_diff, cfg.tau_plus_id, cfg.tau_minus_id,
                                   cfg.c_plus_id, cfg.c_minus_id);
  out.app_part = detail::hinge_part(d_app, app_same, app_diff, cfg.tau_plus_app,
                                    cfg.tau_minus_app, cfg.c_plus_app, cfg.c_minus_app);
  out.total = add(out.id_part, scale(out.app_part, cfg.w_app));
  return out;
}

}  // namespace ridgegen
