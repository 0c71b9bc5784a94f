#include "drama/baselines.hpp"

#include <algorithm>
#include <limits>
#include <queue>

#include "json.hpp"

namespace drama::baselines {

namespace {

std::map<RouterId, double> dijkstra_lengths(const topo::Topology& t, RouterId dst) {
  std::map<RouterId, double> dist;
  using Item = std::pair<double, RouterId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[dst] = 0.0;
  pq.emplace(0.0, dst);
  while (!pq.empty()) {
    auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    for (RouterId u : t.neighbors(v)) {
      const double cand = d + t.link(u, v)->length;
      auto it = dist.find(u);
      if (it == dist.end() || cand < it->second) {
        dist[u] = cand;
        pq.emplace(cand, u);
      }
    }
  }
  return dist;
}

}  // namespace

const SpfRouter::Table& SpfRouter::table(const topo::Topology& t, RouterId dst) const {
  if (t.version() != cached_version_) {
    per_dst_.clear();
    cached_version_ = t.version();
  }
  auto it = per_dst_.find(dst);
  if (it == per_dst_.end()) it = per_dst_.emplace(dst, Table{dijkstra_lengths(t, dst)}).first;
  return it->second;
}

std::optional<double> SpfRouter::distance(const topo::Topology& t, RouterId i, RouterId dst) const {
  const auto& tab = table(t, dst);
  auto it = tab.dist.find(i);
  if (it == tab.dist.end()) return std::nullopt;
  return it->second;
}

std::optional<RouterId> SpfRouter::decide(const topo::Topology& t, RouterId i, RouterId dst) const {
  const auto& tab = table(t, dst);
  std::optional<RouterId> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (RouterId j : t.neighbors(i)) {
    auto it = tab.dist.find(j);
    if (it == tab.dist.end()) continue;
    const double cost = t.link(i, j)->length + it->second;
    if (cost < best_cost) {  // ties keep the earlier (lower) id
      best_cost = cost;
      best = j;
    }
  }
  return best;
}

std::optional<RouterId> bp_decide(const sim::SimState& st, const SpfRouter& spf, RouterId i,
                                  RouterId dst) {
  const topo::Topology& t = st.topology();
  const auto& nbrs = t.neighbors(i);
  if (nbrs.empty()) return std::nullopt;
  const int own = st.backlog(i, dst);
  int best_diff = std::numeric_limits<int>::min();
  std::optional<RouterId> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (RouterId j : nbrs) {
    const int diff = own - st.backlog(j, dst);
    const double d = spf.distance(t, j, dst).value_or(std::numeric_limits<double>::infinity());
    if (diff > best_diff || (diff == best_diff && d < best_dist)) {
      best_diff = diff;
      best = j;
      best_dist = d;
    }
  }
  if (best_diff <= 0) return spf.decide(t, i, dst);
  return best;
}

double QTable::initial_estimate(const topo::Topology& t, RouterId i, RouterId dst, RouterId j) {
  if (init_ == InitMode::constant) return init_value_;
  if (t.version() != cached_version_) {
    hop_dist_.clear();
    cached_version_ = t.version();
  }
  auto it = hop_dist_.find(dst);
  if (it == hop_dist_.end()) it = hop_dist_.emplace(dst, dijkstra_lengths(t, dst)).first;
  auto dit = it->second.find(j);
  if (dit == it->second.end()) return 1e6;  // unreachable: effectively never chosen
  return t.link(i, j)->length + dit->second;
}

double QTable::value(const topo::Topology& t, RouterId i, RouterId dst, RouterId j) {
  auto key = std::make_tuple(i, dst, j);
  auto it = q_.find(key);
  if (it == q_.end()) it = q_.emplace(key, initial_estimate(t, i, dst, j)).first;
  return it->second;
}

std::optional<RouterId> QTable::decide(const topo::Topology& t, RouterId i, RouterId dst,
                                       double epsilon, Rng& rng) {
  const auto& nbrs = t.neighbors(i);
  if (nbrs.empty()) return std::nullopt;
  if (epsilon > 0.0 && rng.uniform01() < epsilon)
    return nbrs[rng.uniform_below(nbrs.size())];
  std::optional<RouterId> best;
  double best_q = std::numeric_limits<double>::infinity();
  for (RouterId j : nbrs) {
    const double q = value(t, i, dst, j);
    if (q < best_q) {
      best_q = q;
      best = j;
    }
  }
  return best;
}

void QTable::update(RouterId i, RouterId j, RouterId dst, double q_wait, double s_transit,
                    double next_min) {
  auto key = std::make_tuple(i, dst, j);
  auto it = q_.find(key);
  if (it == q_.end())
    throw ContractError("qrouting_update on a missing entry (" + std::to_string(i) + "," +
                        std::to_string(dst) + "," + std::to_string(j) + ")");
  it->second += alpha_ * (q_wait + s_transit + next_min - it->second);
}

double QTable::next_min(const topo::Topology& t, RouterId j, RouterId dst) {
  if (j == dst) return 0.0;
  if (!t.has_router(j)) return 0.0;
  const auto& nbrs = t.neighbors(j);
  if (nbrs.empty()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (RouterId k : nbrs) best = std::min(best, value(t, j, dst, k));
  return best;
}

std::string QTable::to_json() const {
  nlohmann::json j;
  j["format"] = "qtable-checkpoint";
  j["version"] = 1;
  j["alpha"] = alpha_;
  j["init"] = init_ == InitMode::hop_estimate ? "hop_estimate" : "constant";
  j["init_value"] = init_value_;
  auto entries = nlohmann::json::array();
  for (const auto& [key, v] : q_) {
    const auto& [i, dst, nb] = key;
    entries.push_back({i, dst, nb, v});
  }
  j["entries"] = entries;
  return j.dump();
}

QTable QTable::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format") || j["format"] != "qtable-checkpoint" || j.value("version", 0) != 1)
    throw ParseError("not a version-1 qtable checkpoint");
  QTable q(j.at("alpha").get<double>(),
           j.at("init").get<std::string>() == "constant" ? InitMode::constant
                                                         : InitMode::hop_estimate,
           j.value("init_value", 0.0));
  for (const auto& e : j.at("entries"))
    q.q_[{e[0].get<RouterId>(), e[1].get<RouterId>(), e[2].get<RouterId>()}] = e[3].get<double>();
  return q;
}

}  // namespace drama::baselines
