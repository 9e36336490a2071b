#pragma once

// Central finite-difference oracle for parameter gradients. Test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "detguard/autodiff/graph.hpp"

namespace detguard::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// `loss` records a scalar loss on a fresh graph from the current store
// values. Compares analytic gradients of every entry against
// (L(p+h) - L(p-h)) / 2h.
inline GradCheckResult gradient_check(ad::ParameterStore& store,
                                      const std::function<ad::Var(ad::Graph&)>& loss, double step = 1e-4) {
  store.zero_grad();
  {
    ad::Graph g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    ad::Graph g;
    return loss(g).value()[0];
  };
  GradCheckResult r;
  for (auto& [name, p] : store.entries()) {
    auto data = p.value.data();
    const std::vector<double> analytic(p.value.grad().begin(), p.value.grad().end());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = eval();
      data[i] = saved - step;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      const double rel = std::abs(numeric - analytic[i]) / denom;
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace detguard::testing
