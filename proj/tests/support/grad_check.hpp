#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "drama/nn/graph.hpp"

namespace drama::testsupport {

/// Central finite differences against the tape's analytic gradients.
/// `build_loss` must rebuild the forward pass from the store's current values
/// (dropout streams should be re-seeded inside so the mask is identical for
/// every evaluation). Returns the worst relative error seen.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param[k]"
  std::size_t checked = 0;
};

inline GradCheckResult check_gradients(
    nn::ParamStore& ps, const std::function<double(nn::ParamStore&, bool record)>& build_loss,
    double h = 1e-4, std::size_t max_per_param = 0) {
  ps.zero_grads();
  build_loss(ps, /*record=*/true);  // populates analytic gradients

  GradCheckResult res;
  for (const auto& name : ps.param_names()) {
    auto& entry = ps.entry(name);
    const std::size_t n = entry.value.size();
    const std::size_t stride = (max_per_param > 0 && n > max_per_param)
                                   ? (n + max_per_param - 1) / max_per_param
                                   : 1;
    for (std::size_t k = 0; k < n; k += stride) {
      const double orig = entry.value.values()[k];
      entry.value.values()[k] = orig + h;
      const double lp = build_loss(ps, false);
      entry.value.values()[k] = orig - h;
      const double lm = build_loss(ps, false);
      entry.value.values()[k] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = entry.grad.values()[k];
      const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return res;
}

}  // namespace drama::testsupport
