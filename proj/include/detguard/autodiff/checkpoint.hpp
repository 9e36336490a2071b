#pragma once

#include <filesystem>
#include <string>

#include "detguard/autodiff/param_store.hpp"

namespace detguard::ad {

// JSON container: {"format": "detguard-checkpoint", "version": 1,
// "rng_seed": n, "params": {name: {"shape": [...], "fan_in": n, "gain": g,
// "data": [...]}}}. Doubles are written in shortest round-trip form, so a
// load reproduces every value bit for bit.
std::string checkpoint_to_string(const ParameterStore& store);
ParameterStore checkpoint_from_string(const std::string& text, const std::string& origin = "<string>");

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

// Copies values of `source` into `target`; names and shapes must agree.
void assign_parameters(ParameterStore& target, const ParameterStore& source);

}  // namespace detguard::ad
