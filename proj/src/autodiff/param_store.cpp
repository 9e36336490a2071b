#include "detguard/autodiff/param_store.hpp"

#include <cmath>
#include <cstring>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"

namespace detguard::ad {

double InitSpec::bound() const {
  if (fan_in <= 0) return 0.0;
  return gain * std::sqrt(3.0 / fan_in);
}

bool has_prefix(const std::string& name, const std::string& prefix) {
  if (prefix.empty()) return true;
  if (name.size() < prefix.size() || name.compare(0, prefix.size(), prefix) != 0) return false;
  return name.size() == prefix.size() || name[prefix.size()] == '.';
}

void ParameterStore::fill(Tensor& t, const InitSpec& init, std::uint64_t seed) {
  const double bound = init.bound();
  Rng rng(seed);
  for (double& v : t.data()) v = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
}

Tensor& ParameterStore::add(const std::string& name, Shape shape, InitSpec init) {
  if (entries_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Parameter p{Tensor(std::move(shape)), init};
  fill(p.value, init, sub_seed(rng_seed_, name));
  return entries_.emplace(name, std::move(p)).first->second.value;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

const InitSpec& ParameterStore::init_spec(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.init;
}

std::vector<std::string> ParameterStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_)
    if (has_prefix(name, prefix)) out.push_back(name);
  return out;
}

void ParameterStore::reinitialize(const std::string& prefix, std::uint64_t seed) {
  const auto names = names_with_prefix(prefix);
  if (prefix.empty() || names.empty()) throw ConfigError("no parameters under prefix '" + prefix + "'");
  for (const auto& name : names) {
    auto& p = entries_.at(name);
    fill(p.value, p.init, sub_seed(seed, name));
    p.value.clear_grad();
  }
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : entries_) p.value.clear_grad();
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : entries_) n += p.value.size();
  return n;
}

std::uint64_t ParameterStore::checksum(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, p] : entries_) {
    if (!has_prefix(name, prefix)) continue;
    feed(name.data(), name.size());
    feed(p.value.data().data(), p.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace detguard::ad
