#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "drama/nn/tensor.hpp"

namespace drama::nn {

enum class Init { fan_in_uniform, zeros, ones };

struct ParamEntry {
  Tensor value;
  Tensor grad;
  Tensor m1, m2;  // adaptive-moment state
};

/// Flat named parameter arrays with matching gradients and optimizer moments,
/// plus non-trainable buffers (batch-norm running statistics). Iteration is
/// deterministic by name. Initial values depend only on (name, seed), never on
/// creation order.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols, Init init,
                 std::uint64_t seed = 0);
  Tensor& create_buffer(const std::string& name, std::size_t rows, std::size_t cols, double fill);

  bool has_param(const std::string& name) const { return params_.count(name) != 0; }
  bool has_buffer(const std::string& name) const { return buffers_.count(name) != 0; }
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  std::vector<std::string> param_names() const;
  std::size_t scalar_count() const;  // total trainable scalars

  void zero_grads();

  /// Adaptive-moment update with bias correction over every parameter.
  void adam_step(double lr, double beta1, double beta2, double eps);
  std::uint64_t adam_steps() const { return adam_t_; }

  /// target <- beta * online + (1 - beta) * target, elementwise, exactly.
  /// Applied to parameters and buffers alike.
  void soft_update_from(const ParamStore& online, double beta);

  void copy_values_from(const ParamStore& other);

  /// Hash over names, shapes and raw value bits of params and buffers.
  std::uint64_t content_hash() const;

  std::string to_json() const;
  static ParamStore from_json(const std::string& text);

 private:
  std::map<std::string, ParamEntry> params_;
  std::map<std::string, Tensor> buffers_;
  std::uint64_t adam_t_ = 0;
};

}  // namespace drama::nn
