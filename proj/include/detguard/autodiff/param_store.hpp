#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "detguard/autodiff/tensor.hpp"

namespace detguard::ad {

// How an entry is (re)initialized: uniform in +-gain*sqrt(3/fan_in), or zero
// when fan_in is 0. gain=sqrt(2) gives He-uniform.
struct InitSpec {
  int fan_in = 0;
  double gain = 1.4142135623730951;

  double bound() const;
};

struct Parameter {
  Tensor value;
  InitSpec init;
};

// Named parameters of a model. Names are hierarchical ("backbone.conv1.weight")
// and the first path component is the module prefix.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  std::uint64_t rng_seed() const noexcept { return rng_seed_; }

  // Registers and initializes an entry from the store seed. Throws on
  // duplicate names.
  Tensor& add(const std::string& name, Shape shape, InitSpec init);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const InitSpec& init_spec(const std::string& name) const;

  const std::map<std::string, Parameter>& entries() const noexcept { return entries_; }
  std::map<std::string, Parameter>& entries() noexcept { return entries_; }

  // Names under `prefix` (matches "prefix" exactly or "prefix.*").
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  // Resamples every entry under `prefix` from its init distribution using
  // `seed`; other entries are untouched. Throws ConfigError when the prefix
  // matches nothing.
  void reinitialize(const std::string& prefix, std::uint64_t seed);

  void zero_grad();
  std::size_t parameter_count() const;

  // FNV-1a over the raw bytes of every entry under `prefix` (all when empty).
  std::uint64_t checksum(const std::string& prefix = "") const;

 private:
  static void fill(Tensor& t, const InitSpec& init, std::uint64_t seed);

  std::uint64_t rng_seed_;
  std::map<std::string, Parameter> entries_;
};

bool has_prefix(const std::string& name, const std::string& prefix);

}  // namespace detguard::ad
