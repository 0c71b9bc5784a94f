#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>
#include <set>

#include "doctest.h"
#include "drama/baselines.hpp"
#include "drama/harness.hpp"

using namespace drama;
using namespace drama::baselines;
using topo::Link;
using topo::RouterId;
using topo::Topology;

namespace {

std::shared_ptr<const Topology> line(int n) {
  std::vector<RouterId> routers;
  std::vector<Link> links;
  for (int i = 0; i < n; ++i) routers.push_back(i);
  for (int i = 0; i + 1 < n; ++i) links.push_back(Link::make(i, i + 1));
  return std::make_shared<Topology>(routers, links);
}

/// All-paths oracle: is j on some minimum-length path from i to dst?
bool on_min_path(const Topology& t, RouterId i, RouterId j, RouterId dst) {
  std::function<double(RouterId, std::set<RouterId>&)> best = [&](RouterId u,
                                                                  std::set<RouterId>& seen) {
    if (u == dst) return 0.0;
    double b = 1e18;
    for (RouterId v : t.neighbors(u)) {
      if (seen.count(v)) continue;
      seen.insert(v);
      b = std::min(b, t.link(u, v)->length + best(v, seen));
      seen.erase(v);
    }
    return b;
  };
  std::set<RouterId> seen{i};
  const double overall = best(i, seen);
  if (overall >= 1e17) return false;
  std::set<RouterId> seen2{i, j};
  const double via_j = t.link(i, j) ? t.link(i, j)->length + best(j, seen2) : 1e18;
  return std::abs(via_j - overall) < 1e-9;
}

}  // namespace

TEST_CASE("spf picks the next hop on the line") {
  auto t = line(3);
  SpfRouter spf;
  CHECK(spf.decide(*t, 0, 2) == 1);
  CHECK(spf.decide(*t, 1, 2) == 2);
}

TEST_CASE("spf breaks ties by the lowest neighbor id") {
  // two equal-length routes from 0 to 3: via 1 and via 2
  Topology t({0, 1, 2, 3}, {Link::make(0, 1), Link::make(0, 2), Link::make(1, 3),
                            Link::make(2, 3)});
  SpfRouter spf;
  CHECK(spf.decide(t, 0, 3) == 1);
}

TEST_CASE("spf reroutes after the only shortest link fails") {
  Topology t({0, 1, 2, 3}, {Link::make(0, 2), Link::make(2, 3), Link::make(0, 1),
                            Link::make(1, 2)});
  SpfRouter spf;
  CHECK(spf.decide(t, 0, 3) == 2);
  Topology failed = topo::apply_event(t, {0, topo::LinkFailure{0, 2}});
  CHECK(spf.decide(failed, 0, 3) == 1);  // recomputed for the new version
}

TEST_CASE("spf holds the packet when the destination is unreachable") {
  Topology t({0, 1, 5}, {Link::make(0, 1)});
  SpfRouter spf;
  CHECK_FALSE(spf.decide(t, 0, 5).has_value());
}

TEST_CASE("spf choices always lie on a minimum-weight path") {
  Rng rng(2025);
  int checked = 0;
  while (checked < 300) {
    const int n = 3 + static_cast<int>(rng.uniform_below(4));
    std::vector<RouterId> routers;
    std::vector<Link> links;
    std::set<std::pair<RouterId, RouterId>> have;
    for (int i = 0; i < n; ++i) routers.push_back(i);
    for (int i = 1; i < n; ++i) {
      RouterId j = static_cast<RouterId>(rng.uniform_below(i));
      links.push_back(Link::make(i, j, 1 + rng.uniform_below(3)));
      have.insert({std::min<RouterId>(i, j), i});
    }
    for (int e = 0; e < n; ++e) {
      RouterId u = static_cast<RouterId>(rng.uniform_below(n));
      RouterId v = static_cast<RouterId>(rng.uniform_below(n));
      if (u == v) continue;
      auto key = std::make_pair(std::min(u, v), std::max(u, v));
      if (have.count(key)) continue;
      have.insert(key);
      links.push_back(Link::make(u, v, 1 + rng.uniform_below(3)));
    }
    Topology t(routers, links);
    SpfRouter spf;
    const RouterId i = static_cast<RouterId>(rng.uniform_below(n));
    const RouterId dst = static_cast<RouterId>(rng.uniform_below(n));
    if (i == dst) continue;
    auto next = spf.decide(t, i, dst);
    REQUIRE(next.has_value());
    CHECK(on_min_path(t, i, *next, dst));
    ++checked;
  }
}

TEST_CASE("backpressure prefers the emptier neighbor and falls back to spf") {
  auto lt = topo::load_topology(R"([routers]
count = 4
[links]
0 1
0 2
1 3
2 3
[traffic]
sources = 0
destinations = 3
lambda = 4.0
)");
  auto tp = std::make_shared<Topology>(lt.topology);
  sim::SimState st = sim::reset(tp, lt.traffic, {}, {}, 5);
  SpfRouter spf;
  // fill router 0 with several packets, stuff neighbor 1 by forwarding there
  // while 1 holds
  for (int s = 0; s < 6; ++s) {
    std::map<RouterId, RouterId> a;
    if (st.queue_length(0) > 0) a[0] = 1;
    st.step(a);
  }
  REQUIRE(st.queue_length(0) > 0);
  REQUIRE(st.queue_length(1) > 2);
  CHECK(st.backlog(1, 3) > st.backlog(2, 3));
  auto pick = bp_decide(st, spf, 0, 3);
  REQUIRE(pick.has_value());
  CHECK(*pick == 2);  // the stuffed neighbor loses

  // uniform zero differential: spf fallback (tie at distance, lowest id)
  sim::SimState fresh = sim::reset(tp, lt.traffic, {}, {}, 6);
  fresh.step({});
  if (fresh.queue_length(0) == 0) fresh.step({});
  if (fresh.queue_length(0) > 0) {
    auto p2 = bp_decide(fresh, spf, 0, 3);
    REQUIRE(p2.has_value());
    CHECK(*p2 == *spf.decide(fresh.topology(), 0, 3));
  }
}

TEST_CASE("backpressure maximizer is consistent") {
  // among maximizers of the differential none has strictly larger backlog
  auto lt = topo::load_topology(R"([routers]
count = 5
[links]
0 1
0 2
0 3
1 4
2 4
3 4
[traffic]
sources = 0
destinations = 4
lambda = 5.0
)");
  auto tp = std::make_shared<Topology>(lt.topology);
  Rng rng(7);
  sim::SimState st = sim::reset(tp, lt.traffic, {}, {}, 7);
  SpfRouter spf;
  for (int s = 0; s < 40; ++s) {
    std::map<RouterId, RouterId> a;
    for (RouterId i : st.routers_with_packets()) {
      const auto& nbrs = st.topology().neighbors(i);
      a[i] = nbrs[rng.uniform_below(nbrs.size())];
    }
    st.step(a);
    if (st.queue_length(0) == 0) continue;
    auto pick = bp_decide(st, spf, 0, 4);
    REQUIRE(pick.has_value());
    const int own = st.backlog(0, 4);
    int best_diff = -1000;
    for (RouterId j : st.topology().neighbors(0))
      best_diff = std::max(best_diff, own - st.backlog(j, 4));
    if (best_diff > 0) CHECK(own - st.backlog(*pick, 4) == best_diff);
  }
}

TEST_CASE("qrouting argmin, exploration, and update arithmetic") {
  auto t = line(4);
  QTable q(0.1, QTable::InitMode::constant, 0.0);
  Rng rng(3);
  // seed two entries by hand through update
  q.value(*t, 0, 3, 1);  // creates with init 0
  q.update(0, 1, 3, 0.0, 4.0, 0.0);  // Q += 0.1 * (4 - 0) = 0.4
  CHECK(q.value(*t, 0, 3, 1) == doctest::Approx(0.4));
  q.update(0, 1, 3, 3.0, 1.0, 2.0);  // target 6: Q += 0.1 * (6 - 0.4)
  CHECK(q.value(*t, 0, 3, 1) == doctest::Approx(0.96));

  // argmin over estimated delivery times
  QTable q2(0.1, QTable::InitMode::constant, 0.0);
  q2.value(*t, 1, 3, 0);
  q2.value(*t, 1, 3, 2);
  q2.update(1, 0, 3, 0, 0, 0);  // leave at 0 then push both
  for (int i = 0; i < 200; ++i) q2.update(1, 0, 3, 0.0, 4.0, 0.0);
  for (int i = 0; i < 200; ++i) q2.update(1, 2, 3, 0.0, 6.0, 0.0);
  CHECK(q2.decide(*t, 1, 3, 0.0, rng) == 0);  // 4 beats 6

  // a fixed point stays put
  QTable q3(0.5, QTable::InitMode::constant, 10.0);
  q3.value(*t, 0, 3, 1);
  q3.update(0, 1, 3, 0.0, 10.0, 0.0);
  CHECK(q3.value(*t, 0, 3, 1) == doctest::Approx(10.0));

  // epsilon = 1 is uniform over neighbors
  std::map<RouterId, int> counts;
  for (int i = 0; i < 4000; ++i) counts[*q2.decide(*t, 1, 3, 1.0, rng)]++;
  CHECK(counts[0] > 1700);
  CHECK(counts[2] > 1700);

  CHECK_THROWS_AS(q2.update(2, 3, 0, 0, 0, 0), ContractError);  // missing entry
}

TEST_CASE("qrouting hop-estimate initialization is immediately greedy-optimal") {
  auto t = line(4);
  QTable q(0.1, QTable::InitMode::hop_estimate);
  Rng rng(5);
  CHECK(q.value(*t, 0, 3, 1) == doctest::Approx(3.0));  // 1 + dist(1,3)
  CHECK(q.value(*t, 1, 3, 0) == doctest::Approx(4.0));  // backwards is longer
  CHECK(q.decide(*t, 0, 3, 0.0, rng) == 1);
}

TEST_CASE("qrouting converges to hop counts on an uncongested line") {
  // synthetic uncongested updates: q_wait 0, transit 1, bootstrap from the
  // table itself
  auto t = line(4);
  QTable q(0.5, QTable::InitMode::constant, 10.0);
  for (int sweep = 0; sweep < 500; ++sweep) {
    for (RouterId i : t->routers()) {
      for (RouterId j : t->neighbors(i)) {
        q.value(*t, i, 3, j);
        const double next_min = j == 3 ? 0.0 : q.next_min(*t, j, 3);
        q.update(i, j, 3, 0.0, 1.0, next_min);
      }
    }
  }
  CHECK(q.value(*t, 0, 3, 1) == doctest::Approx(3.0).epsilon(1e-4));
  CHECK(q.value(*t, 1, 3, 2) == doctest::Approx(2.0).epsilon(1e-4));
  CHECK(q.value(*t, 2, 3, 3) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("qrouting routes along a shortest path after online convergence") {
  auto lt = topo::load_topology(R"([routers]
count = 4
[links]
0 1
1 2
2 3
[traffic]
sources = 0
destinations = 3
lambda = 0.1
)");
  harness::QTrainResult res;
  train::TrainConfig cfg;
  cfg.episodes = 4;
  cfg.steps_per_episode = 256;
  res = harness::qrouting_train_run(cfg, lt, {}, 3, 0.5);
  Rng rng(9);
  auto t = std::make_shared<Topology>(lt.topology);
  CHECK(res.table.decide(*t, 0, 3, 0.0, rng) == 1);
  CHECK(res.table.decide(*t, 1, 3, 0.0, rng) == 2);
  CHECK(res.table.decide(*t, 2, 3, 0.0, rng) == 3);
}

TEST_CASE("spf latency equals hop distance when queues stay empty") {
  auto lt = topo::load_topology_file("topologies/default10.topo");
  harness::EpisodeSpec spec;
  spec.world = &lt;
  spec.lambda = 0.05;  // traffic so sparse that queueing is negligible
  spec.seed = 12;
  spec.steps = 512;
  spec.policy = "spf";
  sim::Metrics m = harness::run_episode(spec);
  CHECK(m.delivery_rate == 1.0);
  // cross-check the mean against the shortest-path distances of the actual
  // source/destination draws is too loose; instead verify per-packet below
  auto tp = std::make_shared<Topology>(lt.topology);
  sim::SimState st = sim::reset(tp, [&] {
    auto t = lt.traffic;
    t.lambda = 0.05;
    return t;
  }(), {}, {}, 12);
  SpfRouter spf;
  for (int s = 0; s < 512; ++s) {
    std::map<RouterId, RouterId> a;
    for (RouterId i : st.routers_with_packets()) {
      auto next = spf.decide(st.topology(), i, st.queue_head(i)->dst);
      if (next) a[i] = *next;
    }
    st.step(a);
  }
  int matched = 0, total = 0;
  for (const auto& rec : st.packet_ledger()) {
    if (rec.status != sim::PacketStatus::delivered || rec.src == rec.dst) continue;
    ++total;
    const double hops = *spf.distance(st.topology(), rec.src, rec.dst);
    if (rec.finished_at - rec.created_at == static_cast<int>(hops)) ++matched;
  }
  CHECK(total > 10);
  CHECK(matched >= total - 2);  // rare same-step bursts add a queue cycle
}

TEST_CASE("spf delivery degrades monotonically with load on the default topology") {
  auto lt = topo::load_topology_file("topologies/default10.topo");
  double prev = 1.1;
  for (double lambda : {1.0, 2.0, 3.0, 4.0}) {
    double mean = 0.0;
    for (std::uint64_t seed : {31, 32}) {
      harness::EpisodeSpec spec;
      spec.world = &lt;
      spec.lambda = lambda;
      spec.seed = seed;
      spec.steps = 512;
      spec.policy = "spf";
      mean += harness::run_episode(spec).delivery_rate;
    }
    mean /= 2;
    CHECK(mean <= prev + 1e-9);
    prev = mean;
  }
}

TEST_CASE("qtable serialization round-trips") {
  auto t = line(3);
  QTable q(0.2, QTable::InitMode::hop_estimate);
  q.value(*t, 0, 2, 1);
  q.update(0, 1, 2, 1.0, 1.0, 0.5);
  QTable rt = QTable::from_json(q.to_json());
  CHECK(rt.alpha() == doctest::Approx(0.2));
  CHECK(rt.entry_count() == q.entry_count());
  CHECK(rt.to_json() == q.to_json());
}
