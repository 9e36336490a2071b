#include "detguard/autodiff/checkpoint.hpp"

#include <fstream>
#include "json.hpp"
#include <sstream>

#include "detguard/errors.hpp"

namespace detguard::ad {

using nlohmann::json;

std::string checkpoint_to_string(const ParameterStore& store) {
  json params = json::object();
  for (const auto& [name, p] : store.entries()) {
    params[name] = {{"shape", p.value.shape()},
                    {"fan_in", p.init.fan_in},
                    {"gain", p.init.gain},
                    {"data", p.value.storage()}};
  }
  json j = {{"format", "detguard-checkpoint"}, {"version", 1}, {"rng_seed", store.rng_seed()}, {"params", params}};
  return j.dump();
}

ParameterStore checkpoint_from_string(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin, e.byte, e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "detguard-checkpoint")
      throw ParseError(origin, 0, "not a detguard checkpoint");
    ParameterStore store(j.at("rng_seed").get<std::uint64_t>());
    for (const auto& [name, entry] : j.at("params").items()) {
      InitSpec init{entry.at("fan_in").get<int>(), entry.at("gain").get<double>()};
      Tensor& t = store.add(name, entry.at("shape").get<Shape>(), init);
      auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != t.size()) throw ParseError(origin, 0, "data length mismatch for '" + name + "'");
      t.storage().assign(data.begin(), data.end());
    }
    return store;
  } catch (const json::exception& e) {
    throw ParseError(origin, 0, e.what());
  }
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << checkpoint_to_string(store);
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str(), path.string());
}

void assign_parameters(ParameterStore& target, const ParameterStore& source) {
  for (auto& [name, p] : target.entries()) {
    const Tensor& src = source.at(name);
    if (src.shape() != p.value.shape())
      throw ShapeError("assign_parameters", name + ": " + shape_str(src.shape()) + " vs " + shape_str(p.value.shape()));
    p.value.storage() = src.storage();
  }
  if (source.entries().size() != target.entries().size())
    throw ConfigError("parameter sets differ in size");
}

}  // namespace detguard::ad
