#include "drama/nn/layers.hpp"

namespace drama::nn {

void init_linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                 std::uint64_t seed) {
  ps.create(name + ".w", in, out, Init::fan_in_uniform, seed);
  ps.create(name + ".b", 1, out, Init::zeros);
}

ValueId linear(Graph& g, ParamStore& ps, const std::string& name, ValueId x) {
  ValueId w = g.param(ps, name + ".w");
  ValueId b = g.param(ps, name + ".b");
  if (g.value(x).cols() != g.value(w).rows())
    throw ContractError("linear " + name + ": input width " + std::to_string(g.value(x).cols()) +
                        " does not match parameter rows " + std::to_string(g.value(w).rows()));
  return g.add_row_broadcast(g.matmul(x, w), b);
}

ValueId linear_frozen(Graph& g, const ParamStore& ps, const std::string& name, ValueId x) {
  ValueId w = g.param_const(ps, name + ".w");
  ValueId b = g.param_const(ps, name + ".b");
  if (g.value(x).cols() != g.value(w).rows())
    throw ContractError("linear " + name + ": input width " + std::to_string(g.value(x).cols()) +
                        " does not match parameter rows " + std::to_string(g.value(w).rows()));
  return g.add_row_broadcast(g.matmul(x, w), b);
}

void init_batch_norm_params(ParamStore& ps, const std::string& prefix, std::size_t features) {
  ps.create(prefix + ".scale", 1, features, Init::ones);
  ps.create(prefix + ".shift", 1, features, Init::zeros);
  ps.create_buffer(prefix + ".running_mean", 1, features, 0.0);
  ps.create_buffer(prefix + ".running_var", 1, features, 1.0);
}

void init_mlp2(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
               std::size_t out, std::uint64_t seed) {
  init_linear(ps, name + ".l1", in, hidden, seed);
  init_batch_norm_params(ps, name + ".bn", hidden);
  init_linear(ps, name + ".l2", hidden, out, seed);
}

ValueId mlp2(Graph& g, ParamStore& ps, const std::string& name, ValueId x, bool sigmoid_out) {
  ValueId h = g.relu(g.batch_norm(ps, name + ".bn", linear(g, ps, name + ".l1", x)));
  ValueId y = linear(g, ps, name + ".l2", h);
  return sigmoid_out ? g.sigmoid(y) : y;
}

ValueId mlp2_frozen(Graph& g, const ParamStore& ps, const std::string& name, ValueId x,
                    bool sigmoid_out) {
  ValueId h = g.relu(g.batch_norm_frozen(ps, name + ".bn", linear_frozen(g, ps, name + ".l1", x)));
  ValueId y = linear_frozen(g, ps, name + ".l2", h);
  return sigmoid_out ? g.sigmoid(y) : y;
}

void init_attention(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                    std::uint64_t seed) {
  ps.create(name + ".wq", in, out, Init::fan_in_uniform, seed);
  ps.create(name + ".wk", in, out, Init::fan_in_uniform, seed);
  ps.create(name + ".wv", in, out, Init::fan_in_uniform, seed);
}

AttentionResult scaled_attention(const ParamStore& ps, const std::string& name, const Tensor& query,
                                 const Tensor& keys, const Tensor& values, double tau,
                                 double dropout_p, Mode mode, Rng* rng) {
  if (keys.rows() == 0) throw ContractError("scaled_attention: empty key set");
  if (query.rows() != 1) throw ContractError("scaled_attention: query must be a single row");
  Graph g(mode, /*record=*/false, rng);
  ValueId q = g.matmul(g.input(query), g.param_const(ps, name + ".wq"));
  ValueId k = g.matmul(g.input(keys), g.param_const(ps, name + ".wk"));
  ValueId v = g.matmul(g.input(values), g.param_const(ps, name + ".wv"));
  std::vector<std::size_t> all(keys.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  ValueId out = g.grouped_attention(q, k, v, {all}, tau, dropout_p);
  AttentionResult res;
  res.output = g.value(out);
  res.coefficients = g.attention_coefficients(out)[0];
  return res;
}

}  // namespace drama::nn
