#pragma once

#include <map>
#include <string>
#include <vector>

#include "detguard/autodiff/param_store.hpp"

namespace detguard::ad {

// SGD with heavy-ball momentum: v <- momentum*v + g; p <- p - lr*v.
class Sgd {
 public:
  Sgd(double lr, double momentum);

  double lr() const noexcept { return lr_; }
  void set_lr(double lr);
  double momentum() const noexcept { return momentum_; }

  // Applies one update and clears every gradient. Throws ConfigError when an
  // entry has no gradient.
  void step(ParameterStore& params);

  const std::vector<double>& velocity(const std::string& name) const;

 private:
  double lr_;
  double momentum_;
  std::map<std::string, std::vector<double>> velocity_;
};

// Single momentum-free step, p <- p - lr*g.
void sgd_step(ParameterStore& params, double lr);

}  // namespace detguard::ad
