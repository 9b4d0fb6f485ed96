#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <functional>
#include <vector>

#include "ridgegen/autodiff.hpp"
#include "ridgegen/rng.hpp"

namespace ridgegen::testing {

// Central-difference check of d(loss)/d(params). The loss builder reads the
// leaves' current values, so perturbing a leaf in place and rebuilding the
// graph yields the perturbed loss.
inline void check_gradients(std::vector<Var<double>> params,
                            const std::function<Var<double>()>& make_loss, double eps = 1e-6,
                            double rtol = 1e-6, double atol = 1e-8) {
  Var<double> loss = make_loss();
  REQUIRE(loss.numel() == 1);
  auto gs = grad(loss, params);
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor<double>& val = params[k].mutable_value();
    const Tensor<double>& g = gs[k].value();
    for (int64_t i = 0; i < val.numel(); ++i) {
      const double saved = val[i];
      val[i] = saved + eps;
      const double lp = make_loss().value()[0];
      val[i] = saved - eps;
      const double lm = make_loss().value()[0];
      val[i] = saved;
      const double fd = (lp - lm) / (2 * eps);
      const double tol = atol + rtol * std::max(std::abs(fd), std::abs(g[i]));
      INFO("param " << k << " element " << i << ": analytic " << g[i] << " vs fd " << fd);
      REQUIRE(std::abs(g[i] - fd) <= tol);
    }
  }
}

inline Var<double> randn_param(Shape shape, Rng& rng) {
  return param(Tensor<double>::randn(std::move(shape), rng));
}

}  // namespace ridgegen::testing
