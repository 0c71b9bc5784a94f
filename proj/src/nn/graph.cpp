#include "drama/nn/graph.hpp"

#include <algorithm>
#include <cmath>

namespace drama::nn {

ValueId Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&, Node&)> back,
                    const char* what) {
  value.require_finite(what);
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tensor& Graph::ensure_grad(ValueId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::add_grad(ValueId id, const Tensor& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor& dst = ensure_grad(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst.values()[i] += g.values()[i];
}

ValueId Graph::input(Tensor x) { return push(std::move(x), false, {}, "input"); }

ValueId Graph::param(ParamStore& ps, const std::string& name) {
  if (!record_) throw ContractError("trainable parameter leaf requires a recording graph");
  auto& cache = param_leaf_cache_[&ps];
  if (auto it = cache.find(name); it != cache.end()) return it->second;
  ParamEntry* entry = &ps.entry(name);
  ValueId id = push(entry->value, true,
                    [entry](Graph&, Node& n) {
                      for (std::size_t i = 0; i < n.grad.size(); ++i)
                        entry->grad.values()[i] += n.grad.values()[i];
                    },
                    "param");
  cache.emplace(name, id);
  return id;
}

ValueId Graph::param_const(const ParamStore& ps, const std::string& name) {
  auto& cache = param_leaf_cache_[&ps];
  if (auto it = cache.find(name); it != cache.end()) return it->second;
  ValueId id = push(ps.value(name), false, {}, "param_const");
  cache.emplace(name, id);
  return id;
}

ValueId Graph::matmul(ValueId a, ValueId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.cols() != B.rows()) throw ContractError("matmul: inner dimensions differ");
  Tensor C(A.rows(), B.cols());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A.data() + i * k;
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng,
              [a, b](Graph& g, Node& n) {
                const Tensor& A = g.nodes_[a].value;
                const Tensor& B = g.nodes_[b].value;
                const Tensor& dC = n.grad;
                if (g.nodes_[a].needs_grad) {
                  Tensor dA(A.rows(), A.cols());
                  for (std::size_t i = 0; i < A.rows(); ++i)
                    for (std::size_t j = 0; j < B.cols(); ++j) {
                      const double d = dC.at(i, j);
                      if (d == 0.0) continue;
                      for (std::size_t p = 0; p < A.cols(); ++p) dA.at(i, p) += d * B.at(p, j);
                    }
                  g.add_grad(a, dA);
                }
                if (g.nodes_[b].needs_grad) {
                  Tensor dB(B.rows(), B.cols());
                  for (std::size_t i = 0; i < A.rows(); ++i)
                    for (std::size_t p = 0; p < A.cols(); ++p) {
                      const double av = A.at(i, p);
                      if (av == 0.0) continue;
                      for (std::size_t j = 0; j < B.cols(); ++j)
                        dB.at(p, j) += av * dC.at(i, j);
                    }
                  g.add_grad(b, dB);
                }
              },
              "matmul");
}

ValueId Graph::add(ValueId a, ValueId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw ContractError("add: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.values()[i] += B.values()[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng,
              [a, b](Graph& g, Node& n) {
                g.add_grad(a, n.grad);
                g.add_grad(b, n.grad);
              },
              "add");
}

ValueId Graph::sub(ValueId a, ValueId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw ContractError("sub: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.values()[i] -= B.values()[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng,
              [a, b](Graph& g, Node& n) {
                g.add_grad(a, n.grad);
                if (g.nodes_[b].needs_grad) {
                  Tensor neg = n.grad;
                  for (double& x : neg.values()) x = -x;
                  g.add_grad(b, neg);
                }
              },
              "sub");
}

ValueId Graph::mul(ValueId a, ValueId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) throw ContractError("mul: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.values()[i] *= B.values()[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(C), ng,
              [a, b](Graph& g, Node& n) {
                if (g.nodes_[a].needs_grad) {
                  Tensor da = n.grad;
                  for (std::size_t i = 0; i < da.size(); ++i)
                    da.values()[i] *= g.nodes_[b].value.values()[i];
                  g.add_grad(a, da);
                }
                if (g.nodes_[b].needs_grad) {
                  Tensor db = n.grad;
                  for (std::size_t i = 0; i < db.size(); ++i)
                    db.values()[i] *= g.nodes_[a].value.values()[i];
                  g.add_grad(b, db);
                }
              },
              "mul");
}

ValueId Graph::add_row_broadcast(ValueId x, ValueId bias_row) {
  const Tensor& X = nodes_[x].value;
  const Tensor& B = nodes_[bias_row].value;
  if (B.rows() != 1 || B.cols() != X.cols())
    throw ContractError("add_row_broadcast: bias must be 1 x cols(x)");
  Tensor C = X;
  for (std::size_t i = 0; i < X.rows(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) C.at(i, j) += B.at(0, j);
  bool ng = nodes_[x].needs_grad || nodes_[bias_row].needs_grad;
  return push(std::move(C), ng,
              [x, bias_row](Graph& g, Node& n) {
                g.add_grad(x, n.grad);
                if (g.nodes_[bias_row].needs_grad) {
                  Tensor db(1, n.grad.cols());
                  for (std::size_t i = 0; i < n.grad.rows(); ++i)
                    for (std::size_t j = 0; j < n.grad.cols(); ++j) db.at(0, j) += n.grad.at(i, j);
                  g.add_grad(bias_row, db);
                }
              },
              "add_row_broadcast");
}

ValueId Graph::scale(ValueId x, double s) {
  Tensor C = nodes_[x].value;
  for (double& v : C.values()) v *= s;
  return push(std::move(C), nodes_[x].needs_grad,
              [x, s](Graph& g, Node& n) {
                Tensor dx = n.grad;
                for (double& v : dx.values()) v *= s;
                g.add_grad(x, dx);
              },
              "scale");
}

ValueId Graph::relu(ValueId x) {
  Tensor C = nodes_[x].value;
  for (double& v : C.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(C), nodes_[x].needs_grad,
              [x](Graph& g, Node& n) {
                Tensor dx = n.grad;
                const Tensor& X = g.nodes_[x].value;
                for (std::size_t i = 0; i < dx.size(); ++i)
                  if (X.values()[i] <= 0.0) dx.values()[i] = 0.0;
                g.add_grad(x, dx);
              },
              "relu");
}

ValueId Graph::sigmoid(ValueId x) {
  Tensor C = nodes_[x].value;
  for (double& v : C.values()) v = 1.0 / (1.0 + std::exp(-v));
  ValueId id = push(std::move(C), nodes_[x].needs_grad, {}, "sigmoid");
  if (nodes_[id].needs_grad)
    nodes_[id].back = [x, id](Graph& g, Node& n) {
      Tensor dx = n.grad;
      const Tensor& Y = g.nodes_[id].value;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double y = Y.values()[i];
        dx.values()[i] *= y * (1.0 - y);
      }
      g.add_grad(x, dx);
    };
  return id;
}

ValueId Graph::square(ValueId x) {
  Tensor C = nodes_[x].value;
  for (double& v : C.values()) v *= v;
  return push(std::move(C), nodes_[x].needs_grad,
              [x](Graph& g, Node& n) {
                Tensor dx = n.grad;
                const Tensor& X = g.nodes_[x].value;
                for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= 2.0 * X.values()[i];
                g.add_grad(x, dx);
              },
              "square");
}

ValueId Graph::sum_all(ValueId x) {
  double s = 0.0;
  for (double v : nodes_[x].value.values()) s += v;
  return push(Tensor::scalar(s), nodes_[x].needs_grad,
              [x](Graph& g, Node& n) {
                const double d = n.grad.at(0, 0);
                Tensor dx = Tensor::full(g.nodes_[x].value.rows(), g.nodes_[x].value.cols(), d);
                g.add_grad(x, dx);
              },
              "sum_all");
}

ValueId Graph::mean_all(ValueId x) {
  const Tensor& X = nodes_[x].value;
  if (X.size() == 0) throw ContractError("mean_all of empty tensor");
  double s = 0.0;
  for (double v : X.values()) s += v;
  const double inv = 1.0 / static_cast<double>(X.size());
  return push(Tensor::scalar(s * inv), nodes_[x].needs_grad,
              [x, inv](Graph& g, Node& n) {
                const double d = n.grad.at(0, 0) * inv;
                Tensor dx = Tensor::full(g.nodes_[x].value.rows(), g.nodes_[x].value.cols(), d);
                g.add_grad(x, dx);
              },
              "mean_all");
}

ValueId Graph::concat_cols(const std::vector<ValueId>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t rows = nodes_[parts[0]].value.rows();
  std::size_t cols = 0;
  bool ng = false;
  for (ValueId p : parts) {
    if (nodes_[p].value.rows() != rows) throw ContractError("concat_cols: row count mismatch");
    cols += nodes_[p].value.cols();
    ng = ng || nodes_[p].needs_grad;
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  for (ValueId p : parts) {
    const Tensor& X = nodes_[p].value;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) C.at(i, off + j) = X.at(i, j);
    off += X.cols();
  }
  auto parts_copy = parts;
  return push(std::move(C), ng,
              [parts_copy](Graph& g, Node& n) {
                std::size_t off = 0;
                for (ValueId p : parts_copy) {
                  const Tensor& X = g.nodes_[p].value;
                  if (g.nodes_[p].needs_grad) {
                    Tensor dx(X.rows(), X.cols());
                    for (std::size_t i = 0; i < X.rows(); ++i)
                      for (std::size_t j = 0; j < X.cols(); ++j) dx.at(i, j) = n.grad.at(i, off + j);
                    g.add_grad(p, dx);
                  }
                  off += X.cols();
                }
              },
              "concat_cols");
}

ValueId Graph::gather_rows(ValueId x, std::vector<std::size_t> rows) {
  const Tensor& X = nodes_[x].value;
  Tensor C(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) throw ContractError("gather_rows: index out of range");
    for (std::size_t j = 0; j < X.cols(); ++j) C.at(i, j) = X.at(rows[i], j);
  }
  return push(std::move(C), nodes_[x].needs_grad,
              [x, rows = std::move(rows)](Graph& g, Node& n) {
                Tensor dx(g.nodes_[x].value.rows(), g.nodes_[x].value.cols());
                for (std::size_t i = 0; i < rows.size(); ++i)
                  for (std::size_t j = 0; j < dx.cols(); ++j) dx.at(rows[i], j) += n.grad.at(i, j);
                g.add_grad(x, dx);
              },
              "gather_rows");
}

namespace {
struct BnCache {
  Tensor xhat;        // B x F
  std::vector<double> inv_std;  // F
};
}  // namespace

ValueId Graph::batch_norm(ParamStore& ps, const std::string& prefix, ValueId x) {
  constexpr double kEps = 1e-5;
  constexpr double kMomentum = 0.1;

  // Create the leaves before taking any node references: pushing may
  // reallocate the node vector.
  ValueId scale_id, shift_id;
  if (record_) {
    scale_id = param(ps, prefix + ".scale");
    shift_id = param(ps, prefix + ".shift");
  } else {
    scale_id = param_const(ps, prefix + ".scale");
    shift_id = param_const(ps, prefix + ".shift");
  }
  const Tensor& X = nodes_[x].value;
  const std::size_t B = X.rows(), F = X.cols();
  const Tensor& gamma = nodes_[scale_id].value;
  const Tensor& delta = nodes_[shift_id].value;
  if (gamma.cols() != F) throw ContractError("batch_norm: feature width mismatch for " + prefix);

  if (mode_ == Mode::eval) {
    const Tensor& rm = ps.buffer(prefix + ".running_mean");
    const Tensor& rv = ps.buffer(prefix + ".running_var");
    Tensor Y(B, F);
    std::vector<double> inv(F);
    for (std::size_t j = 0; j < F; ++j) inv[j] = 1.0 / std::sqrt(rv.at(0, j) + kEps);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < F; ++j)
        Y.at(i, j) = gamma.at(0, j) * (X.at(i, j) - rm.at(0, j)) * inv[j] + delta.at(0, j);
    bool ng = nodes_[x].needs_grad || nodes_[scale_id].needs_grad || nodes_[shift_id].needs_grad;
    auto rm_copy = rm, rv_copy = rv;
    return push(std::move(Y), ng,
                [x, scale_id, shift_id, rm_copy, rv_copy, B, F](Graph& g, Node& n) {
                  const Tensor& X = g.nodes_[x].value;
                  const Tensor& gamma = g.nodes_[scale_id].value;
                  Tensor dx(B, F), dgamma(1, F), ddelta(1, F);
                  for (std::size_t j = 0; j < F; ++j) {
                    const double inv = 1.0 / std::sqrt(rv_copy.at(0, j) + kEps);
                    for (std::size_t i = 0; i < B; ++i) {
                      const double d = n.grad.at(i, j);
                      dx.at(i, j) = d * gamma.at(0, j) * inv;
                      dgamma.at(0, j) += d * (X.at(i, j) - rm_copy.at(0, j)) * inv;
                      ddelta.at(0, j) += d;
                    }
                  }
                  g.add_grad(x, dx);
                  g.add_grad(scale_id, dgamma);
                  g.add_grad(shift_id, ddelta);
                },
                "batch_norm(eval)");
  }

  if (B < 2) throw ContractError("batch_norm in train mode requires at least 2 rows");

  BnCache cache;
  cache.xhat = Tensor(B, F);
  cache.inv_std.resize(F);
  Tensor Y(B, F);
  Tensor& rm = ps.buffer(prefix + ".running_mean");
  Tensor& rv = ps.buffer(prefix + ".running_var");
  for (std::size_t j = 0; j < F; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < B; ++i) mean += X.at(i, j);
    mean /= static_cast<double>(B);
    double var = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double d = X.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(B);
    const double inv = 1.0 / std::sqrt(var + kEps);
    cache.inv_std[j] = inv;
    for (std::size_t i = 0; i < B; ++i) {
      const double xh = (X.at(i, j) - mean) * inv;
      cache.xhat.at(i, j) = xh;
      Y.at(i, j) = gamma.at(0, j) * xh + delta.at(0, j);
    }
    rm.at(0, j) = (1.0 - kMomentum) * rm.at(0, j) + kMomentum * mean;
    rv.at(0, j) = (1.0 - kMomentum) * rv.at(0, j) + kMomentum * var;
  }
  bool ng = nodes_[x].needs_grad || nodes_[scale_id].needs_grad || nodes_[shift_id].needs_grad;
  return push(std::move(Y), ng,
              [x, scale_id, shift_id, cache = std::move(cache), B, F](Graph& g, Node& n) {
                const Tensor& gamma = g.nodes_[scale_id].value;
                Tensor dgamma(1, F), ddelta(1, F);
                for (std::size_t j = 0; j < F; ++j)
                  for (std::size_t i = 0; i < B; ++i) {
                    dgamma.at(0, j) += n.grad.at(i, j) * cache.xhat.at(i, j);
                    ddelta.at(0, j) += n.grad.at(i, j);
                  }
                if (g.nodes_[x].needs_grad) {
                  Tensor dx(B, F);
                  const double invB = 1.0 / static_cast<double>(B);
                  for (std::size_t j = 0; j < F; ++j) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t i = 0; i < B; ++i) {
                      sum_dy += n.grad.at(i, j);
                      sum_dy_xhat += n.grad.at(i, j) * cache.xhat.at(i, j);
                    }
                    const double k = gamma.at(0, j) * cache.inv_std[j];
                    for (std::size_t i = 0; i < B; ++i)
                      dx.at(i, j) = k * (n.grad.at(i, j) - invB * sum_dy -
                                         cache.xhat.at(i, j) * invB * sum_dy_xhat);
                  }
                  g.add_grad(x, dx);
                }
                g.add_grad(scale_id, dgamma);
                g.add_grad(shift_id, ddelta);
              },
              "batch_norm(train)");
}

ValueId Graph::batch_norm_frozen(const ParamStore& ps, const std::string& prefix, ValueId x) {
  // Normalization against a const store: no gradients, no running-stat
  // updates. The statistics follow the graph mode so a frozen forward in
  // train mode reproduces the trainable forward's values exactly.
  const Tensor& X = nodes_[x].value;
  const std::size_t B = X.rows(), F = X.cols();
  constexpr double kEps = 1e-5;
  const Tensor& gamma = ps.value(prefix + ".scale");
  const Tensor& delta = ps.value(prefix + ".shift");
  if (gamma.cols() != F) throw ContractError("batch_norm: feature width mismatch for " + prefix);
  Tensor Y(B, F);
  if (mode_ == Mode::train) {
    if (B < 2) throw ContractError("batch_norm in train mode requires at least 2 rows");
    for (std::size_t j = 0; j < F; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < B; ++i) mean += X.at(i, j);
      mean /= static_cast<double>(B);
      double var = 0.0;
      for (std::size_t i = 0; i < B; ++i) {
        const double d = X.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(B);
      const double inv = 1.0 / std::sqrt(var + kEps);
      for (std::size_t i = 0; i < B; ++i)
        Y.at(i, j) = gamma.at(0, j) * (X.at(i, j) - mean) * inv + delta.at(0, j);
    }
  } else {
    const Tensor& rm = ps.buffer(prefix + ".running_mean");
    const Tensor& rv = ps.buffer(prefix + ".running_var");
    for (std::size_t j = 0; j < F; ++j) {
      const double inv = 1.0 / std::sqrt(rv.at(0, j) + kEps);
      for (std::size_t i = 0; i < B; ++i)
        Y.at(i, j) = gamma.at(0, j) * (X.at(i, j) - rm.at(0, j)) * inv + delta.at(0, j);
    }
  }
  return push(std::move(Y), false, {}, "batch_norm(frozen)");
}

namespace {
struct AttnCache {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::vector<double>> coeff;      // post-dropout, used in the weighted sum
  double tau;
};
}  // namespace

ValueId Graph::grouped_attention(ValueId q, ValueId k, ValueId v,
                                 std::vector<std::vector<std::size_t>> groups, double tau,
                                 double dropout_p) {
  const Tensor& Q = nodes_[q].value;
  const Tensor& K = nodes_[k].value;
  const Tensor& V = nodes_[v].value;
  if (K.cols() != Q.cols() || V.rows() != K.rows())
    throw ContractError("grouped_attention: shape mismatch");
  if (!(tau > 0.0)) throw ContractError("grouped_attention: tau must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ContractError("grouped_attention: dropout_p must be in [0,1)");
  if (groups.size() != Q.rows()) throw ContractError("grouped_attention: one group per query row");

  const std::size_t d = Q.cols(), dv = V.cols();
  const bool drop = mode_ == Mode::train && dropout_p > 0.0;
  if (drop && dropout_rng_ == nullptr)
    throw ContractError("grouped_attention: dropout requires an rng");

  AttnCache cache;
  cache.groups = groups;
  cache.tau = tau;
  cache.coeff.resize(groups.size());
  std::vector<std::vector<double>> pre_dropout(groups.size());

  Tensor Y(groups.size(), dv);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    const auto& src = groups[r];
    if (src.empty()) continue;  // isolated: zero aggregate
    std::vector<double> s(src.size());
    double smax = -1e300;
    for (std::size_t j = 0; j < src.size(); ++j) {
      if (src[j] >= K.rows()) throw ContractError("grouped_attention: source row out of range");
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += Q.at(r, c) * K.at(src[j], c);
      s[j] = tau * dot;
      smax = std::max(smax, s[j]);
    }
    double z = 0.0;
    for (double& x : s) {
      x = std::exp(x - smax);
      z += x;
    }
    std::vector<double> a(src.size());
    for (std::size_t j = 0; j < src.size(); ++j) a[j] = s[j] / z;
    pre_dropout[r] = a;
    if (drop) {
      const double keep = 1.0 - dropout_p;
      for (std::size_t j = 0; j < src.size(); ++j)
        a[j] = (dropout_rng_->uniform01() < keep) ? a[j] / keep : 0.0;
    }
    cache.coeff[r] = a;
    for (std::size_t j = 0; j < src.size(); ++j)
      for (std::size_t c = 0; c < dv; ++c) Y.at(r, c) += a[j] * V.at(src[j], c);
  }

  bool ng = nodes_[q].needs_grad || nodes_[k].needs_grad || nodes_[v].needs_grad;
  ValueId id = push(std::move(Y), ng,
                    [q, k, v, cache = std::move(cache), pre = pre_dropout, drop, dropout_p](
                        Graph& g, Node& n) {
                      const Tensor& Q = g.nodes_[q].value;
                      const Tensor& K = g.nodes_[k].value;
                      const Tensor& V = g.nodes_[v].value;
                      const std::size_t d = Q.cols(), dv = V.cols();
                      Tensor dQ(Q.rows(), d), dK(K.rows(), d), dV(V.rows(), dv);
                      const double keep = 1.0 - dropout_p;
                      for (std::size_t r = 0; r < cache.groups.size(); ++r) {
                        const auto& src = cache.groups[r];
                        if (src.empty()) continue;
                        const auto& a = cache.coeff[r];
                        // d(coefficient after dropout)
                        std::vector<double> da(src.size(), 0.0);
                        for (std::size_t j = 0; j < src.size(); ++j) {
                          double acc = 0.0;
                          for (std::size_t c = 0; c < dv; ++c)
                            acc += n.grad.at(r, c) * V.at(src[j], c);
                          da[j] = acc;
                          for (std::size_t c = 0; c < dv; ++c)
                            dV.at(src[j], c) += a[j] * n.grad.at(r, c);
                        }
                        // undo dropout scaling: kept entries carry 1/keep
                        if (drop)
                          for (std::size_t j = 0; j < src.size(); ++j)
                            da[j] = (a[j] != 0.0) ? da[j] / keep : 0.0;
                        // softmax backward over the pre-dropout coefficients
                        const auto& p = pre[r];
                        double dot = 0.0;
                        for (std::size_t j = 0; j < src.size(); ++j) dot += p[j] * da[j];
                        for (std::size_t j = 0; j < src.size(); ++j) {
                          const double ds = p[j] * (da[j] - dot) * cache.tau;
                          for (std::size_t c = 0; c < d; ++c) {
                            dQ.at(r, c) += ds * K.at(src[j], c);
                            dK.at(src[j], c) += ds * Q.at(r, c);
                          }
                        }
                      }
                      g.add_grad(q, dQ);
                      g.add_grad(k, dK);
                      g.add_grad(v, dV);
                    },
                    "grouped_attention");
  nodes_[id].attn_coeffs = std::move(pre_dropout);
  return id;
}

const std::vector<std::vector<double>>& Graph::attention_coefficients(ValueId id) const {
  return nodes_[id].attn_coeffs;
}

ValueId Graph::binarize(ValueId x, double threshold) {
  Tensor C = nodes_[x].value;
  for (double& v : C.values()) v = v >= threshold ? 1.0 : 0.0;
  // straight-through: gradient passes unchanged
  return push(std::move(C), nodes_[x].needs_grad,
              [x](Graph& g, Node& n) { g.add_grad(x, n.grad); }, "binarize");
}

void Graph::backward(ValueId loss) {
  if (!record_) throw ContractError("backward on a non-recording graph");
  if (nodes_.empty()) throw ContractError("backward without a forward pass");
  Node& ln = nodes_[loss];
  if (ln.value.size() != 1) throw ContractError("backward requires a scalar loss");
  ensure_grad(loss).at(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, n);
  }
}

}  // namespace drama::nn
