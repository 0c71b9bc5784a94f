#pragma once

#include <map>
#include <optional>
#include <string>

#include "drama/rng.hpp"
#include "drama/sim.hpp"
#include "drama/topo.hpp"

namespace drama::baselines {

using topo::RouterId;

/// Static shortest-path routing over link lengths. Routes are recomputed only
/// when the topology version changes; ties prefer the lowest neighbor id.
class SpfRouter {
 public:
  /// Neighbor on a minimum-length path, or empty when dst is unreachable
  /// (the packet is held).
  std::optional<RouterId> decide(const topo::Topology& t, RouterId i, RouterId dst) const;
  /// Shortest-path length from i to dst (link lengths as weights).
  std::optional<double> distance(const topo::Topology& t, RouterId i, RouterId dst) const;

 private:
  struct Table {
    std::map<RouterId, double> dist;  // to destination
  };
  mutable int cached_version_ = -1;
  mutable std::map<RouterId, Table> per_dst_;
  const Table& table(const topo::Topology& t, RouterId dst) const;
};

/// Differential-backlog forwarding: choose the neighbor maximizing
/// U_i(z) - U_j(z) over per-destination virtual backlogs; among maximizers
/// prefer smaller SPF distance to z, then lowest id. A best differential <= 0
/// falls back to the SPF next hop.
std::optional<RouterId> bp_decide(const sim::SimState& st, const SpfRouter& spf, RouterId i,
                                  RouterId dst);

/// Tabular routing estimates: Q(i, z, j) approximates delivery time in steps
/// when forwarding a packet for z through neighbor j.
class QTable {
 public:
  enum class InitMode { hop_estimate, constant };
  explicit QTable(double alpha = 0.1, InitMode init = InitMode::hop_estimate,
                  double init_value = 0.0)
      : alpha_(alpha), init_(init), init_value_(init_value) {}

  double alpha() const { return alpha_; }

  /// Epsilon-greedy argmin over estimated delivery times; ties prefer the
  /// lowest neighbor id. Entries for current neighbors are created on demand.
  std::optional<RouterId> decide(const topo::Topology& t, RouterId i, RouterId dst, double epsilon,
                                 Rng& rng);

  /// Q(i,z,j) += alpha * (q_wait + s_transit + next_min - Q(i,z,j)).
  void update(RouterId i, RouterId j, RouterId dst, double q_wait, double s_transit,
              double next_min);

  /// min over j's current neighbors of Q(j, z, .); 0 when j == z.
  double next_min(const topo::Topology& t, RouterId j, RouterId dst);

  double value(const topo::Topology& t, RouterId i, RouterId dst, RouterId j);
  std::size_t entry_count() const { return q_.size(); }

  std::string to_json() const;
  static QTable from_json(const std::string& text);

 private:
  double alpha_;
  InitMode init_;
  double init_value_;
  std::map<std::tuple<RouterId, RouterId, RouterId>, double> q_;  // (i, dst, j)
  mutable int cached_version_ = -1;
  mutable std::map<RouterId, std::map<RouterId, double>> hop_dist_;  // dst -> node -> dist

  double initial_estimate(const topo::Topology& t, RouterId i, RouterId dst, RouterId j);
};

}  // namespace drama::baselines
