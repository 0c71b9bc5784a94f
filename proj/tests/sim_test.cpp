#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "doctest.h"
#include "drama/sim.hpp"

using namespace drama;
using namespace drama::sim;
using topo::Link;
using topo::RouterId;
using topo::Topology;
using topo::TrafficSpec;

namespace {

std::shared_ptr<const Topology> line(int n) {
  std::vector<RouterId> routers;
  std::vector<Link> links;
  for (int i = 0; i < n; ++i) routers.push_back(i);
  for (int i = 0; i + 1 < n; ++i) links.push_back(Link::make(i, i + 1));
  return std::make_shared<Topology>(routers, links);
}

TrafficSpec traffic(std::vector<RouterId> src, std::vector<RouterId> dst, double lambda) {
  TrafficSpec t;
  t.sources = std::move(src);
  t.destinations = std::move(dst);
  t.lambda = lambda;
  return t;
}

/// Always forward the head packet to the neighbor closest to its destination
/// (lowest id among those strictly closer; falls back to lowest id).
std::map<RouterId, RouterId> greedy_actions(const SimState& st) {
  std::map<RouterId, RouterId> a;
  for (RouterId i : st.routers_with_packets()) {
    const auto& nbrs = st.topology().neighbors(i);
    if (nbrs.empty()) continue;
    a[i] = nbrs.front();
    const Packet* head = st.queue_head(i);
    for (RouterId j : nbrs)
      if (std::abs(j - head->dst) < std::abs(a[i] - head->dst)) a[i] = j;
  }
  return a;
}

}  // namespace

TEST_CASE("reset is bit-identical for identical arguments") {
  auto t = line(4);
  auto tr = traffic({0}, {3}, 1.5);
  SimState a = reset(t, tr, {}, {}, 42);
  SimState b = reset(t, tr, {}, {}, 42);
  CHECK(a.debug_serialize() == b.debug_serialize());
  for (int s = 0; s < 50; ++s) {
    a.step(greedy_actions(a));
    b.step(greedy_actions(b));
    REQUIRE(a.debug_serialize() == b.debug_serialize());
  }
  SimState c = reset(t, tr, {}, {}, 43);
  c.step({});
  a.step({});
  CHECK(a.debug_serialize() != c.debug_serialize());
}

TEST_CASE("no-op policy on disconnected sources delivers nothing") {
  auto t = std::make_shared<Topology>(std::vector<RouterId>{0, 1, 9},
                                      std::vector<Link>{Link::make(0, 1)});
  SimState st = reset(t, traffic({0}, {9}, 1.0), {}, {}, 7);
  for (int s = 0; s < 512; ++s) st.step({});
  CHECK(st.delivered_count() == 0);
  CHECK(st.generated_count() > 0);
  CHECK(st.generated_count() == st.lost_count() + st.queued_count());
}

TEST_CASE("traffic volume matches the Poisson law within three sigma") {
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 2.0), {}, {}, 1234);
  for (int s = 0; s < 512; ++s) st.step(greedy_actions(st));
  const double expected = 2.0 * 512;
  const double sigma = std::sqrt(expected);
  CHECK(st.generated_count() > expected - 3 * sigma);
  CHECK(st.generated_count() < expected + 3 * sigma);
}

TEST_CASE("a packet generated into a full source queue is lost immediately") {
  SimConfig cfg;
  cfg.queue_capacity = 3;
  auto t = line(2);
  SimState st = reset(t, traffic({0}, {1}, 50.0), {}, cfg, 5);
  st.step({});  // nobody forwards; the burst overflows the source
  CHECK(st.queue_length(0) == 3);
  CHECK(st.lost_count() > 0);
  CHECK(st.generated_count() == st.lost_count() + st.queued_count());
}

TEST_CASE("a packet whose source equals its destination is delivered at once") {
  auto t = line(2);
  SimState st = reset(t, traffic({0}, {0}, 3.0), {}, {}, 9);
  st.step({});
  CHECK(st.delivered_count() == st.generated_count());
  CHECK(st.queued_count() == 0);
  Metrics m = st.metrics(0, 1);
  REQUIRE(m.avg_latency_ms.has_value());
  CHECK(*m.avg_latency_ms == doctest::Approx(0.0));
}

TEST_CASE("observation encodes an empty queue as zero occupancy with zero padding") {
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 1.0), {}, {}, 11);
  Observation o = st.observe(1);
  CHECK(o.queue[0] == doctest::Approx(0.0));
  CHECK(o.queue[1] == doctest::Approx(1.0));  // capacity 50 / 50
  for (std::size_t k = 2; k < o.queue.size(); ++k) CHECK(o.queue[k] == 0.0);
  for (double h : o.history) CHECK(h == 0.0);
  CHECK(o.degree == doctest::Approx(2.0 / 16.0));
  CHECK(o.flat().size() == SimConfig{}.obs.dim());
}

TEST_CASE("observation occupancy of 25/50 is one half") {
  SimConfig cfg;
  auto t = line(2);
  SimState st = reset(t, traffic({0}, {1}, 1.0), {}, cfg, 13);
  bool saw_exact_half = false;
  while (st.queue_length(0) < 30) {
    st.step({});
    Observation o = st.observe(0);
    CHECK(o.queue[0] == doctest::Approx(st.queue_length(0) / 50.0));
    if (st.queue_length(0) == 25) {
      CHECK(o.queue[0] == doctest::Approx(0.5));
      saw_exact_half = true;
    }
  }
  CHECK(saw_exact_half);  // seeded growth passes through 25 of 50
}

TEST_CASE("a newly added router observes with the standard dimension") {
  auto t = line(3);
  std::vector<topo::TopologyEvent> events{
      {2, topo::RouterAddition{10, {Link::make(10, 0), Link::make(10, 2)}}}};
  SimState st = reset(t, traffic({0}, {2}, 1.0), events, {}, 17);
  st.step(greedy_actions(st));
  st.step(greedy_actions(st));
  CHECK_THROWS_AS(st.observe(10), ContractError);  // not present yet
  st.step(greedy_actions(st));                     // event fires at step 2
  Observation o = st.observe(10);
  CHECK(o.flat().size() == SimConfig{}.obs.dim());
  CHECK(o.degree == doctest::Approx(2.0 / 16.0));
  // identity codes are stable and distinct across ids
  CHECK(id_code(10, 8) == id_code(10, 8));
  CHECK(id_code(10, 8) != id_code(0, 8));
}

TEST_CASE("single packet one hop from its destination arrives next step") {
  auto t = line(2);
  SimState st = reset(t, traffic({0}, {1}, 0.7), {}, {}, 19);
  // find the first step that generates a packet
  while (st.generated_count() == 0) st.step({});
  const int created = st.current_step() - 1;
  StepOutcome out = st.step({{0, 1}});
  REQUIRE(out.delivered.size() >= 1);
  REQUIRE(out.transitions.size() >= 1);
  const AgentOutcome& tr = out.transitions.front();
  CHECK(tr.done);
  CHECK(tr.reward == doctest::Approx(-1.0));  // t_l = 1, destination queue free
  const auto& rec = st.packet_ledger()[out.delivered.front()];
  CHECK(rec.finished_at - rec.created_at == st.current_step() - 1 - created);
}

TEST_CASE("forwarding into a full queue loses the packet with the loss penalty") {
  SimConfig cfg;
  cfg.queue_capacity = 2;
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 8.0), {}, cfg, 23);
  // router 1 never forwards, so its queue fills after two hand-offs
  int losses_seen = 0;
  for (int s = 0; s < 20 && losses_seen == 0; ++s) {
    StepOutcome out = st.step(st.queue_length(0) > 0
                                  ? std::map<RouterId, RouterId>{{0, 1}}
                                  : std::map<RouterId, RouterId>{});
    for (const auto& tr : out.transitions) {
      if (tr.done && tr.action != tr.packet_dst) {
        CHECK(tr.reward == doctest::Approx(-100.0));
        ++losses_seen;
      }
    }
  }
  CHECK(losses_seen > 0);
  CHECK(st.queue_length(1) == 2);
}

TEST_CASE("per-direction bandwidth admits opposite flows on one link") {
  // 0 holds traffic for 2, 1 holds traffic for 0: both cross link (0,1) in
  // opposite directions in the same step and both are admitted.
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 0.0001), {}, {}, 29);
  // hand-craft queue contents via generation: run until 0 has a packet
  while (st.queue_length(0) == 0) st.step({});
  StepOutcome o1 = st.step({{0, 1}});  // 0 -> 1
  REQUIRE(o1.transitions.size() == 1);
  // now 1 holds that packet; let 0 accumulate another one
  while (st.queue_length(0) == 0) st.step({});
  StepOutcome o2 = st.step({{0, 1}, {1, 0}});
  CHECK(o2.transitions.size() == 2);  // both directions admitted, none deferred
}

TEST_CASE("an action toward a non-neighbor halts with a diagnostic") {
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 5.0), {}, {}, 31);
  while (st.queue_length(0) == 0) st.step({});
  CHECK_THROWS_AS(st.step({{0, 2}}), ContractError);
}

TEST_CASE("an action from an empty-queue router is a contract violation") {
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 0.0001), {}, {}, 33);
  CHECK_THROWS_AS(st.step({{1, 0}}), ContractError);
}

TEST_CASE("compute_reward matches the closed form") {
  RewardConfig rc;
  CHECK(compute_reward(rc, 1, 0, true) == doctest::Approx(-100.0));
  CHECK(compute_reward(rc, 1, 0, false) == doctest::Approx(-1.0));
  CHECK(compute_reward(rc, 2, 7, false) == doctest::Approx(-9.0));
}

TEST_CASE("metrics ratio, empty window, and zero-delivered cases") {
  SimConfig cfg;
  cfg.queue_capacity = 50;
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 1.0), {}, cfg, 37);
  for (int s = 0; s < 64; ++s) st.step(greedy_actions(st));
  // drain
  for (int s = 0; s < 64; ++s) st.step(greedy_actions(st));
  Metrics m = st.metrics(0, 64);
  CHECK(m.delivery_rate == doctest::Approx(1.0));
  REQUIRE(m.avg_latency_ms.has_value());
  CHECK(*m.avg_latency_ms >= 2.0);  // two hops minimum

  Metrics empty = st.metrics(1000, 2000);
  CHECK(empty.delivery_rate == 1.0);
  CHECK_FALSE(empty.avg_latency_ms.has_value());

  // zero delivered, some lost: disconnected destination
  auto t2 = std::make_shared<Topology>(std::vector<RouterId>{0, 1, 5},
                                       std::vector<Link>{Link::make(0, 1)});
  SimConfig tiny;
  tiny.queue_capacity = 1;
  SimState st2 = reset(t2, traffic({0}, {5}, 5.0), {}, tiny, 39);
  for (int s = 0; s < 32; ++s) st2.step({});
  Metrics m2 = st2.metrics(0, 32);
  CHECK(m2.lost > 0);
  CHECK(m2.delivery_rate == doctest::Approx(0.0));
  CHECK_FALSE(m2.avg_latency_ms.has_value());
}

TEST_CASE("nine delivered one lost is a 0.9 delivery rate") {
  SimConfig cfg;
  cfg.queue_capacity = 1;
  auto t = line(2);
  SimState st = reset(t, traffic({0}, {1}, 1.0), {}, cfg, 101);
  // serve the queue until nine packets are through, then hold until one is
  // dropped at a full source
  while (st.delivered_count() < 9) {
    if (st.queue_length(0) > 0)
      st.step({{0, 1}});
    else
      st.step({});
  }
  const auto delivered_so_far = st.delivered_count();
  while (st.lost_count() < 1) st.step({});
  Metrics m = st.metrics(0, st.current_step());
  CHECK(m.delivered >= 9);
  CHECK(m.lost >= 1);
  CHECK(m.delivery_rate ==
        doctest::Approx(static_cast<double>(m.delivered) / (m.delivered + m.lost)));
  CHECK(delivered_so_far >= 9);
}

TEST_CASE("FIFO: dequeue order equals enqueue order") {
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 1.5), {}, {}, 41);
  std::vector<std::int64_t> enqueued_at_1, dequeued_at_1;
  for (int s = 0; s < 256; ++s) {
    StepOutcome out = st.step(greedy_actions(st));
    for (const auto& tr : out.transitions) {
      if (tr.action == 1 && !tr.done) enqueued_at_1.push_back(tr.packet_id);
      if (tr.agent == 1) dequeued_at_1.push_back(tr.packet_id);
    }
  }
  REQUIRE(dequeued_at_1.size() >= 10);
  for (std::size_t k = 0; k < dequeued_at_1.size(); ++k)
    CHECK(dequeued_at_1[k] == enqueued_at_1[k]);
}

TEST_CASE("a packet enqueued behind q others waits exactly q steps") {
  SimConfig cfg;
  auto t = line(3);
  SimState st = reset(t, traffic({0}, {2}, 3.0), {}, cfg, 43);
  // grow a backlog at router 1 by holding it while 0 keeps forwarding
  std::map<std::int64_t, int> tq_at_enqueue;
  std::map<std::int64_t, int> measured_wait;
  for (int s = 0; s < 400; ++s) {
    std::map<RouterId, RouterId> actions;
    if (st.queue_length(0) > 0) actions[0] = 1;
    if (s >= 40 && st.queue_length(1) > 0) actions[1] = 2;  // start serving late
    StepOutcome out = st.step(actions);
    for (const auto& tr : out.transitions) {
      if (tr.action == 1 && !tr.done) tq_at_enqueue[tr.packet_id] = tr.t_q;
      if (tr.agent == 1) measured_wait[tr.packet_id] = tr.queue_wait;
    }
  }
  // router 1 receives at most one packet per step and serves one per step
  // once active, so occupancy at enqueue equals the measured wait.
  int compared = 0;
  for (const auto& [pkt, tq] : tq_at_enqueue) {
    auto it = measured_wait.find(pkt);
    if (it == measured_wait.end()) continue;
    // packets enqueued before service began wait out the holding phase too
    if (tq == it->second) ++compared;
  }
  CHECK(compared > 50);
}

TEST_CASE("per-packet reward sums telescope into latency") {
  // With unit penalties and no losses, a delivered packet's latency equals
  // -(sum of its hop rewards) plus its creation wait beyond one cycle.
  // The creation wait beyond one cycle is max(pre-1, 0) + earlier: `pre`
  // packets already queued keep the source serving through the creation step
  // (one service overlaps the wait), and `earlier` same-step creations sit
  // strictly ahead.
  auto t = line(5);
  SimState st = reset(t, traffic({0, 1}, {4}, 1.2), {}, {}, 47);
  std::map<std::int64_t, double> reward_sum;
  std::map<std::int64_t, int> creation_wait;
  for (int s = 0; s < 512; ++s) {
    std::map<RouterId, int> pre;
    for (RouterId r : {0, 1}) pre[r] = st.queue_length(r);
    const std::size_t ledger_before = st.packet_ledger().size();
    StepOutcome out = st.step(greedy_actions(st));
    std::map<RouterId, int> earlier;
    for (std::size_t id = ledger_before; id < st.packet_ledger().size(); ++id) {
      const auto& rec = st.packet_ledger()[id];
      creation_wait[static_cast<std::int64_t>(id)] =
          std::max(pre[rec.src] - 1, 0) + earlier[rec.src]++;
    }
    for (const auto& tr : out.transitions) reward_sum[tr.packet_id] += tr.reward;
  }
  int checked = 0, strict_checked = 0;
  for (std::size_t id = 0; id < st.packet_ledger().size(); ++id) {
    const auto& rec = st.packet_ledger()[id];
    if (rec.status != PacketStatus::delivered) continue;
    if (!reward_sum.count(static_cast<std::int64_t>(id))) continue;
    const double latency = rec.finished_at - rec.created_at;
    const double rsum = reward_sum[static_cast<std::int64_t>(id)];
    const int wait0 = creation_wait[static_cast<std::int64_t>(id)];
    CHECK(latency == doctest::Approx(-rsum + wait0));
    ++checked;
    if (wait0 == 0) {
      CHECK(latency == doctest::Approx(-rsum));  // the telescoping identity
      ++strict_checked;
    }
  }
  CHECK(checked > 100);
  CHECK(strict_checked > 50);
}

TEST_CASE("conservation holds across random episodes with topology events") {
  Rng rng(4242);
  auto base = R"([routers]
count = 6
[links]
0 1
1 2
2 3
3 4
4 5
0 5
1 4
[traffic]
sources = 0 1
destinations = 4 5
lambda = 2.0
)";
  auto lt = topo::load_topology(base);
  for (int ep = 0; ep < 40; ++ep) {
    std::vector<topo::TopologyEvent> events;
    if (ep % 2 == 1) {
      // a mid-run failure keeps the loss accounting honest
      events.push_back({32 + static_cast<int>(rng.uniform_below(32)),
                        topo::RouterFailure{static_cast<RouterId>(2 + rng.uniform_below(2))}});
    }
    SimState st = reset(std::make_shared<Topology>(lt.topology), lt.traffic, events, {},
                        rng.next_u64());
    for (int s = 0; s < 128; ++s) {
      std::map<RouterId, RouterId> actions;
      for (RouterId i : st.routers_with_packets()) {
        const auto& nbrs = st.topology().neighbors(i);
        if (nbrs.empty()) continue;
        actions[i] = nbrs[rng.uniform_below(nbrs.size())];
      }
      st.step(actions);  // step() itself asserts conservation
    }
    st.check_conservation();
    CHECK(st.generated_count() ==
          st.delivered_count() + st.lost_count() + st.queued_count() + st.in_flight_count());
  }
}

TEST_CASE("no packet is both delivered and lost and no queue exceeds capacity") {
  SimConfig cfg;
  cfg.queue_capacity = 5;
  auto lt = topo::load_topology(R"([routers]
count = 5
[links]
0 1
1 2
2 3
3 4
0 4
[traffic]
sources = 0 1
destinations = 3 4
lambda = 3.0
)");
  Rng rng(777);
  SimState st = reset(std::make_shared<Topology>(lt.topology), lt.traffic, {}, cfg, 99);
  for (int s = 0; s < 256; ++s) {
    std::map<RouterId, RouterId> actions;
    for (RouterId i : st.routers_with_packets()) {
      const auto& nbrs = st.topology().neighbors(i);
      actions[i] = nbrs[rng.uniform_below(nbrs.size())];
    }
    st.step(actions);
    for (RouterId r : st.topology().routers()) CHECK(st.queue_length(r) <= 5);
  }
  for (const auto& rec : st.packet_ledger()) {
    const bool delivered = rec.status == PacketStatus::delivered;
    const bool lost = rec.status == PacketStatus::lost;
    const bool both = delivered && lost;
    CHECK_FALSE(both);
  }
}
