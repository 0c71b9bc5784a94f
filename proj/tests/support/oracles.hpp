#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "drama/rng.hpp"
#include "drama/topo.hpp"

namespace drama::testsupport {

/// Brute-force WSP oracle: minimum over all simple paths j -> z of the hop
/// costs length(u,v) + queue(v) with queue(z) = 0, plus the first hop i -> j.
/// Exponential; only for graphs of a handful of nodes.
inline std::optional<double> wsp_brute_force(const topo::Topology& t, topo::RouterId i,
                                             topo::RouterId j, topo::RouterId z,
                                             const std::map<topo::RouterId, int>& queues) {
  auto queue_of = [&](topo::RouterId r) -> double {
    if (r == z) return 0.0;
    auto it = queues.find(r);
    return it == queues.end() ? 0.0 : it->second;
  };
  double best = -1.0;
  std::set<topo::RouterId> visited{j};
  std::function<void(topo::RouterId, double)> dfs = [&](topo::RouterId u, double cost) {
    if (u == z) {
      if (best < 0 || cost < best) best = cost;
      return;
    }
    for (topo::RouterId v : t.neighbors(u)) {
      if (visited.count(v)) continue;
      visited.insert(v);
      dfs(v, cost + t.link(u, v)->length + queue_of(v));
      visited.erase(v);
    }
  };
  dfs(j, 0.0);
  if (best < 0) return std::nullopt;
  return t.link(i, j)->length + queue_of(j) + best;
}

/// Random spanning tree plus chords; connected by construction.
inline topo::Topology random_connected_topology(Rng& rng, int max_nodes) {
  const int n = 2 + static_cast<int>(rng.uniform_below(max_nodes - 1));
  std::vector<topo::RouterId> routers;
  for (int i = 0; i < n; ++i) routers.push_back(i);
  std::vector<topo::Link> links;
  std::set<std::pair<topo::RouterId, topo::RouterId>> have;
  for (int i = 1; i < n; ++i) {
    const auto j = static_cast<topo::RouterId>(rng.uniform_below(i));
    links.push_back(topo::Link::make(i, j, 1 + rng.uniform_below(3)));
    have.insert({std::min<topo::RouterId>(i, j), std::max<topo::RouterId>(i, j)});
  }
  const int extras = static_cast<int>(rng.uniform_below(n + 1));
  for (int e = 0; e < extras; ++e) {
    const auto u = static_cast<topo::RouterId>(rng.uniform_below(n));
    const auto v = static_cast<topo::RouterId>(rng.uniform_below(n));
    if (u == v) continue;
    auto key = std::make_pair(std::min(u, v), std::max(u, v));
    if (have.count(key)) continue;
    have.insert(key);
    links.push_back(topo::Link::make(u, v, 1 + rng.uniform_below(3)));
  }
  return topo::Topology(routers, links);
}

}  // namespace drama::testsupport
