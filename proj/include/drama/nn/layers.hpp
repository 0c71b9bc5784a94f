#pragma once

#include <string>

#include "drama/nn/graph.hpp"

namespace drama::nn {

/// y = x W + b with parameters `name.w` [in x out] and `name.b` [1 x out].
void init_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                 std::uint64_t seed);
ValueId linear(Graph& g, ParamStore& ps, const std::string& name, ValueId x);
ValueId linear_frozen(Graph& g, const ParamStore& ps, const std::string& name, ValueId x);

void init_batch_norm_params(ParamStore& ps, const std::string& prefix, std::size_t features);

/// Two-layer block: linear -> batch norm -> relu -> linear [-> sigmoid].
/// Parameter names: name.l1.*, name.bn.*, name.l2.*.
void init_mlp2(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
               std::size_t out, std::uint64_t seed);
ValueId mlp2(Graph& g, ParamStore& ps, const std::string& name, ValueId x, bool sigmoid_out);
ValueId mlp2_frozen(Graph& g, const ParamStore& ps, const std::string& name, ValueId x,
                    bool sigmoid_out);

struct AttentionResult {
  Tensor output;                  // 1 x d
  std::vector<double> coefficients;  // per key, post-softmax (pre-dropout)
};

/// Single-query scaled dot-product attention over projections `name.wq`,
/// `name.wk`, `name.wv`: coefficients softmax(tau * (Wq q).(Wk k_j)), output
/// sum_j a_j (Wv v_j). Train mode applies inverted dropout to the
/// coefficients.
void init_attention(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                    std::uint64_t seed);
AttentionResult scaled_attention(const ParamStore& ps, const std::string& name, const Tensor& query,
                                 const Tensor& keys, const Tensor& values, double tau,
                                 double dropout_p, Mode mode, Rng* rng);

}  // namespace drama::nn
