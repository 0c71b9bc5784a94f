#include "drama/nn/param_store.hpp"

#include <cmath>
#include <cstring>

#include "drama/rng.hpp"
#include "json.hpp"

namespace drama::nn {

Tensor& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols, Init init,
                           std::uint64_t seed) {
  if (params_.count(name)) throw ContractError("parameter already exists: " + name);
  ParamEntry e;
  e.value = Tensor(rows, cols);
  e.grad = Tensor(rows, cols);
  e.m1 = Tensor(rows, cols);
  e.m2 = Tensor(rows, cols);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(e.value.values().begin(), e.value.values().end(), 1.0);
      break;
    case Init::fan_in_uniform: {
      Rng rng = keyed_rng(seed, fnv1a64(name));
      double limit = 1.0 / std::sqrt(static_cast<double>(rows));
      for (double& x : e.value.values()) x = rng.uniform(-limit, limit);
      break;
    }
  }
  auto [it, ok] = params_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

Tensor& ParamStore::create_buffer(const std::string& name, std::size_t rows, std::size_t cols,
                                  double fill) {
  if (buffers_.count(name)) throw ContractError("buffer already exists: " + name);
  auto [it, ok] = buffers_.emplace(name, Tensor::full(rows, cols, fill));
  (void)ok;
  return it->second;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ContractError("unknown buffer: " + name);
  return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ContractError("unknown buffer: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::param_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.value.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [k, e] : params_) std::fill(e.grad.values().begin(), e.grad.values().end(), 0.0);
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (auto& [k, e] : params_) {
    double* th = e.value.data();
    const double* g = e.grad.data();
    double* m = e.m1.data();
    double* v = e.m2.data();
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      th[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
    e.value.require_finite("adam update of " + k);
  }
}

void ParamStore::soft_update_from(const ParamStore& online, double beta) {
  if (params_.size() != online.params_.size())
    throw ContractError("soft_update: parameter sets differ");
  for (auto& [name, e] : params_) {
    const auto& src = online.entry(name).value;
    if (!e.value.same_shape(src)) throw ContractError("soft_update: shape mismatch for " + name);
    for (std::size_t i = 0; i < e.value.size(); ++i)
      e.value.values()[i] = beta * src.values()[i] + (1.0 - beta) * e.value.values()[i];
  }
  for (auto& [name, b] : buffers_) {
    const auto& src = online.buffer(name);
    if (!b.same_shape(src)) throw ContractError("soft_update: shape mismatch for buffer " + name);
    for (std::size_t i = 0; i < b.size(); ++i)
      b.values()[i] = beta * src.values()[i] + (1.0 - beta) * b.values()[i];
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, e] : params_) {
    const auto& src = other.entry(name).value;
    if (!e.value.same_shape(src)) throw ContractError("copy_values: shape mismatch for " + name);
    e.value = src;
  }
  for (auto& [name, b] : buffers_) {
    const auto& src = other.buffer(name);
    if (!b.same_shape(src)) throw ContractError("copy_values: shape mismatch for buffer " + name);
    b = src;
  }
}

namespace {
void hash_tensor(std::uint64_t& h, const std::string& name, const Tensor& t) {
  auto mix = [&h](std::uint64_t x) {
    h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  mix(fnv1a64(name));
  mix(t.rows());
  mix(t.cols());
  for (double d : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    mix(bits);
  }
}
}  // namespace

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 0x8f1bbcdcbfa53e0bull;
  for (const auto& [name, e] : params_) hash_tensor(h, name, e.value);
  for (const auto& [name, b] : buffers_) hash_tensor(h, "buffer:" + name, b);
  return h;
}

std::string ParamStore::to_json() const {
  nlohmann::json j;
  j["format"] = "param-store";
  j["version"] = 1;
  auto dump = [](const Tensor& t) {
    nlohmann::json e;
    e["shape"] = {t.rows(), t.cols()};
    e["values"] = t.values();
    return e;
  };
  for (const auto& [name, e] : params_) j["params"][name] = dump(e.value);
  for (const auto& [name, b] : buffers_) j["buffers"][name] = dump(b);
  return j.dump();
}

ParamStore ParamStore::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format") || j["format"] != "param-store" || j.value("version", 0) != 1)
    throw ParseError("not a version-1 param-store document");
  ParamStore ps;
  auto read = [](const nlohmann::json& e) {
    auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ParseError("tensor shape must have two extents");
    Tensor t(shape[0], shape[1]);
    auto vals = e.at("values").get<std::vector<double>>();
    if (vals.size() != t.size()) throw ParseError("tensor value count does not match shape");
    t.values() = std::move(vals);
    return t;
  };
  if (j.contains("params"))
    for (auto it = j["params"].begin(); it != j["params"].end(); ++it) {
      Tensor t = read(it.value());
      ps.create(it.key(), t.rows(), t.cols(), Init::zeros);
      ps.entry(it.key()).value = std::move(t);
    }
  if (j.contains("buffers"))
    for (auto it = j["buffers"].begin(); it != j["buffers"].end(); ++it) {
      Tensor t = read(it.value());
      ps.create_buffer(it.key(), t.rows(), t.cols(), 0.0) = std::move(t);
    }
  return ps;
}

}  // namespace drama::nn
