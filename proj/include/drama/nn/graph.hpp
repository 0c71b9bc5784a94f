#pragma once

#include <functional>
#include <string>
#include <vector>

#include "drama/nn/param_store.hpp"
#include "drama/nn/tensor.hpp"
#include "drama/rng.hpp"

namespace drama::nn {

enum class Mode { train, eval };

using ValueId = std::size_t;

/// Reverse-mode tape over Tensor values. Nodes are appended in topological
/// order; backward() walks them in reverse and accumulates parameter
/// gradients into the owning ParamStore. With recording disabled the same
/// forward code runs as a plain evaluator against a const parameter store,
/// which keeps rollout and training paths identical.
class Graph {
 public:
  Graph(Mode mode, bool record, Rng* dropout_rng = nullptr)
      : mode_(mode), record_(record), dropout_rng_(dropout_rng) {}

  Mode mode() const { return mode_; }
  bool recording() const { return record_; }

  // ----- leaves -----
  ValueId input(Tensor x);
  /// Trainable leaf; gradients flow back into ps. Requires recording.
  ValueId param(ParamStore& ps, const std::string& name);
  /// Read-only view of a parameter (no gradient), usable while not recording
  /// or for frozen evaluation inside a recorded graph.
  ValueId param_const(const ParamStore& ps, const std::string& name);

  // ----- ops -----
  ValueId matmul(ValueId a, ValueId b);
  ValueId add(ValueId a, ValueId b);
  ValueId sub(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);  // elementwise
  ValueId add_row_broadcast(ValueId x, ValueId bias_row);
  ValueId scale(ValueId x, double s);
  ValueId relu(ValueId x);
  ValueId sigmoid(ValueId x);
  ValueId square(ValueId x);
  ValueId sum_all(ValueId x);   // 1x1
  ValueId mean_all(ValueId x);  // 1x1
  ValueId concat_cols(const std::vector<ValueId>& parts);
  ValueId gather_rows(ValueId x, std::vector<std::size_t> rows);

  /// Train mode: normalize by batch statistics (eps 1e-5) and update running
  /// stats with momentum 0.1; requires at least two rows. Eval mode:
  /// normalize by running stats, a pure function. Scale/shift parameters are
  /// `prefix.scale` / `prefix.shift`; running stats are buffers
  /// `prefix.running_mean` / `prefix.running_var`.
  ValueId batch_norm(ParamStore& ps, const std::string& prefix, ValueId x);
  ValueId batch_norm_frozen(const ParamStore& ps, const std::string& prefix, ValueId x);

  /// For each output row r, softmax over tau * (q[r] . k[s]) for s in
  /// groups[r], optional inverted dropout on the coefficients in train mode,
  /// then a coefficient-weighted sum of v rows. Empty groups produce zero
  /// rows. Coefficients (post-softmax, pre-dropout) are retained for
  /// inspection.
  ValueId grouped_attention(ValueId q, ValueId k, ValueId v,
                            std::vector<std::vector<std::size_t>> groups, double tau,
                            double dropout_p);
  const std::vector<std::vector<double>>& attention_coefficients(ValueId attention_node) const;

  /// Threshold to {0,1} with a straight-through gradient.
  ValueId binarize(ValueId x, double threshold);

  const Tensor& value(ValueId id) const { return nodes_[id].value; }
  const Tensor& grad(ValueId id) const { return nodes_[id].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients for every parameter
  /// that participated; others keep their current (zeroed) gradients.
  void backward(ValueId loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool needs_grad = false;
    std::function<void(Graph&, Node&)> back;  // empty for leaves / no-grad
    std::vector<std::vector<double>> attn_coeffs;  // grouped_attention only
  };

  Mode mode_;
  bool record_;
  Rng* dropout_rng_;
  std::vector<Node> nodes_;
  std::map<const void*, std::map<std::string, ValueId>> param_leaf_cache_;

  ValueId push(Tensor value, bool needs_grad, std::function<void(Graph&, Node&)> back,
               const char* what);
  Tensor& ensure_grad(ValueId id);
  void add_grad(ValueId id, const Tensor& g);
};

}  // namespace drama::nn
