#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "drama/errors.hpp"

namespace drama::topo {

/// Stable for the lifetime of a run; ids of removed routers are never reused.
using RouterId = std::int32_t;

struct Link {
  RouterId a = 0, b = 0;  // normalized so a < b
  int length = 1;         // timesteps to traverse
  int bandwidth = 1;      // packets admitted per timestep per direction

  static Link make(RouterId u, RouterId v, int length = 1, int bandwidth = 1);
};

struct LinkFailure {
  RouterId a = 0, b = 0;
};
struct RouterFailure {
  RouterId id = 0;
};
struct RouterAddition {
  RouterId id = 0;
  std::vector<Link> links;
};

struct TopologyEvent {
  int at_step = 0;
  std::variant<LinkFailure, RouterFailure, RouterAddition> kind;
};

struct TrafficSpec {
  std::vector<RouterId> sources;       // sorted, unique
  std::vector<RouterId> destinations;  // sorted, unique
  double lambda = 1.0;                 // mean packets per timestep (Poisson)
};

/// Undirected graph of routers and links. Immutable after construction;
/// apply_event produces a new version so concurrent readers stay safe between
/// event applications.
class Topology {
 public:
  Topology() = default;
  Topology(std::vector<RouterId> routers, std::vector<Link> links);

  const std::vector<RouterId>& routers() const { return routers_; }
  std::size_t router_count() const { return routers_.size(); }
  std::size_t link_count() const { return links_.size(); }
  bool has_router(RouterId id) const;
  bool has_link(RouterId u, RouterId v) const;
  std::optional<Link> link(RouterId u, RouterId v) const;
  const std::map<std::pair<RouterId, RouterId>, Link>& links() const { return links_; }

  /// Neighbors of i, ascending by id. Consumers must be order-insensitive.
  const std::vector<RouterId>& neighbors(RouterId i) const;

  int version() const { return version_; }

 private:
  std::vector<RouterId> routers_;  // sorted
  std::map<std::pair<RouterId, RouterId>, Link> links_;
  std::map<RouterId, std::vector<RouterId>> adj_;
  int version_ = 0;

  void rebuild_adjacency();
  friend Topology apply_event(const Topology&, const TopologyEvent&);
};

/// Returns a new topology version with the event applied. A RouterFailure
/// removes the router and all incident links; the caller is responsible for
/// accounting packets that were queued there.
Topology apply_event(const Topology& t, const TopologyEvent& ev);

/// Min cost from every router to destination z, where hop (u,v) costs
/// length(u,v) + queue(v), with queue(z) treated as 0 (delivery is immediate
/// at the destination). Routers with no path to z are absent from the map.
std::map<RouterId, double> wsp_cost_to(const Topology& t, RouterId z,
                                       const std::map<RouterId, int>& queue_lengths);

/// WSP(i,j,z): cost of forwarding from i through neighbor j to destination z
/// with queues frozen at the supplied snapshot. Empty if z is unreachable
/// from j. Requires j in neighbors(i).
std::optional<double> weighted_shortest_path(const Topology& t, RouterId i, RouterId j,
                                             RouterId z,
                                             const std::map<RouterId, int>& queue_lengths);

struct LoadedTopology {
  Topology topology;
  TrafficSpec traffic;
  std::vector<TopologyEvent> events;  // sorted by at_step
};

/// Parses the topology file format (see README). Throws ParseError with a
/// line number, or ValidationError naming the violated invariant.
LoadedTopology load_topology(const std::string& text);
LoadedTopology load_topology_file(const std::string& path);

/// Inverse of load_topology; parse(save(x)) reproduces x exactly.
std::string save_topology(const LoadedTopology& lt);

}  // namespace drama::topo
