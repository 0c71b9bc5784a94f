#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drama/nn/graph.hpp"
#include "drama/nn/layers.hpp"
#include "drama/sim.hpp"
#include "drama/topo.hpp"

namespace drama::agent {

using topo::RouterId;

enum class Ablation { full, qsl_only, oel_qsl, ecl_qsl };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct AgentConfig {
  int hidden_dim = 8;
  int message_dim = 8;
  int comm_rounds = 2;  // C
  double tau = 0.25;
  double dropout = 0.3;
  Ablation ablation = Ablation::full;
  int quantize_bits = 0;     // 0 = float messages, 1 = thresholded to {0,1}
  int message_interval = 1;  // broadcast every k steps; receivers reuse cached messages between

  bool uses_oel() const { return ablation == Ablation::full || ablation == Ablation::oel_qsl; }
  bool uses_ecl() const {
    return (ablation == Ablation::full || ablation == Ablation::ecl_qsl) && comm_rounds > 0;
  }
  int rounds() const { return uses_ecl() ? comm_rounds : 0; }
  /// Width of the vector entering the first communication round.
  int h0_dim(int obs_dim) const { return uses_oel() ? message_dim : obs_dim; }
  int feature_dim(int obs_dim) const {
    switch (ablation) {
      case Ablation::full:
        return (comm_rounds + 1) * message_dim;
      case Ablation::oel_qsl:
        return message_dim;
      case Ablation::qsl_only:
        return obs_dim;
      case Ablation::ecl_qsl:
        return obs_dim + comm_rounds * message_dim;
    }
    return 0;
  }
};

/// Per-router hidden messages cached from the most recent broadcast step
/// (message_interval > 1). rounds[i][c] is h_i^(c), c in [0, C).
struct MessageState {
  std::map<RouterId, std::vector<std::vector<double>>> rounds;
};

/// One joint observation of the network under a specific topology version.
struct SnapshotView {
  const std::map<RouterId, sim::Observation>* obs = nullptr;
  const topo::Topology* topology = nullptr;
};

/// Row bookkeeping for features computed over one or more stacked snapshots.
struct FeatureRows {
  std::vector<std::pair<std::size_t, RouterId>> index;  // row -> (snapshot, router)
  std::map<std::pair<std::size_t, RouterId>, std::size_t> row_of;
  nn::ValueId features = 0;            // M x feature_dim
  std::vector<nn::ValueId> h_chain;    // h^(0)..h^(C) when the ECL runs
};

/// The DRAMA policy network. One parameter set is shared by every router;
/// the serialized size is independent of the topology.
class Model {
 public:
  Model(AgentConfig cfg, int obs_dim, std::uint64_t init_seed);

  const AgentConfig& config() const { return cfg_; }
  int obs_dim() const { return obs_dim_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Stacked forward through OEL and ECL for every router of every snapshot.
  /// The trainable overload records gradients and, in train mode, updates
  /// batch-norm statistics; the const overload is a pure evaluation.
  FeatureRows features(nn::Graph& g, std::span<const SnapshotView> snaps,
                       const MessageState* cache = nullptr, int step = 0) const;
  FeatureRows features_trainable(nn::Graph& g, std::span<const SnapshotView> snaps);

  /// Pairwise Q head: one scalar per (row i, row j) pair.
  nn::ValueId score_pairs(nn::Graph& g, const FeatureRows& fr,
                          const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const;
  nn::ValueId score_pairs_trainable(nn::Graph& g, const FeatureRows& fr,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

  /// Refreshes the broadcast cache from a feature pass (call on broadcast steps).
  void update_message_cache(const nn::Graph& g, const FeatureRows& fr, MessageState& msgs) const;

  /// h^(0)..h^(C) from an externally supplied h^(0), fresh messages, frozen
  /// parameters; groups[r] lists the key/value rows for row r.
  std::vector<nn::ValueId> message_chain(nn::Graph& g, nn::ValueId h0,
                                         const std::vector<std::vector<std::size_t>>& groups) const;

  std::string save_checkpoint_json() const;
  static Model load_checkpoint_json(const std::string& text);

  /// Same parameters, different message handling (quantization / broadcast
  /// interval do not change any shapes).
  Model with_message_flags(int quantize_bits, int message_interval) const;

 private:
  AgentConfig cfg_;
  int obs_dim_ = 0;
  nn::ParamStore params_;

  struct Access;
  /// The C attention rounds; message_source may substitute what receivers see
  /// for a round (staleness); quantization is applied after it. Returns
  /// h^(0)..h^(C).
  std::vector<nn::ValueId> comm_chain(
      nn::Graph& g, const Access& a, nn::ValueId h0,
      const std::vector<std::vector<std::size_t>>& groups,
      const std::function<nn::ValueId(nn::Graph&, int, nn::ValueId)>& message_source) const;
  FeatureRows build_features(nn::Graph& g, const Access& a, std::span<const SnapshotView> snaps,
                             const MessageState* cache, int step) const;
  nn::ValueId build_scores(nn::Graph& g, const Access& a, const FeatureRows& fr,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const;
};

/// F1(o): two-layer encoder with sigmoid output in (0,1)^message_dim.
std::vector<double> encode_observation(const Model& m, const sim::Observation& o);

/// C rounds of attention aggregation from the given h^(0) vectors; returns
/// each router's concatenated feature f_i. Eval mode, fresh messages.
std::map<RouterId, std::vector<double>> run_communication(
    const Model& m, const topo::Topology& t,
    const std::map<RouterId, std::vector<double>>& h0);

/// Q_{i,j} for every neighbor feature against f_i.
std::map<RouterId, double> score_neighbors(const Model& m, const std::vector<double>& f_i,
                                           const std::map<RouterId, std::vector<double>>& f_nbrs);

/// Epsilon-greedy over Q scores; ties prefer the lowest router id.
RouterId select_action(const std::map<RouterId, double>& q_scores, double epsilon, Rng& rng);

/// Observation -> features -> neighbor scores -> action for every router with
/// a nonempty queue. Routers without neighbors hold their packet and are
/// absent from the result.
std::map<RouterId, RouterId> act_all(const Model& m, const sim::SimState& st, double epsilon,
                                     Rng& rng, MessageState* msgs = nullptr);

/// act_all against an already-taken joint observation (avoids recomputing it
/// when the caller also snapshots the state).
std::map<RouterId, RouterId> act_from_obs(const Model& m, const topo::Topology& t,
                                          const std::map<RouterId, sim::Observation>& obs,
                                          const std::vector<RouterId>& acting, double epsilon,
                                          Rng& rng, MessageState* msgs, int step);

}  // namespace drama::agent
