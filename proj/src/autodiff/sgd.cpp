#include "detguard/autodiff/sgd.hpp"

#include "detguard/errors.hpp"

namespace detguard::ad {

Sgd::Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
}

void Sgd::set_lr(double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  lr_ = lr;
}

void Sgd::step(ParameterStore& params) {
  for (const auto& [name, p] : params.entries())
    if (!p.value.has_grad()) throw ConfigError("parameter '" + name + "' has no gradient");
  for (auto& [name, p] : params.entries()) {
    auto& v = velocity_[name];
    auto data = p.value.data();
    auto grad = p.value.grad();
    if (v.size() != data.size()) v.assign(data.size(), 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i];
      data[i] -= lr_ * v[i];
    }
    p.value.clear_grad();
  }
}

const std::vector<double>& Sgd::velocity(const std::string& name) const {
  auto it = velocity_.find(name);
  if (it == velocity_.end()) throw ConfigError("no momentum buffer for '" + name + "'");
  return it->second;
}

void sgd_step(ParameterStore& params, double lr) {
  Sgd opt(lr, 0.0);
  opt.step(params);
}

}  // namespace detguard::ad
