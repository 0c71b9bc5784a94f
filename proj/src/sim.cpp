#include "drama/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace drama::sim {

double compute_reward(const RewardConfig& rc, int t_l, int t_q, bool lost) {
  if (lost) return -rc.r_lost;
  return -(rc.tau_q * t_q + rc.tau_l * t_l);
}

std::vector<double> id_code(RouterId id, int dim) {
  constexpr std::uint64_t kIdSalt = 0x7261646d61726f75ull;
  const double bound = std::sqrt(3.0);  // uniform on [-sqrt(3), sqrt(3)) has unit variance
  Rng rng = keyed_rng(kIdSalt, static_cast<std::uint64_t>(static_cast<std::int64_t>(id)));
  std::vector<double> out(dim);
  for (double& x : out) x = rng.uniform(-bound, bound);
  return out;
}

std::vector<double> Observation::flat() const {
  std::vector<double> out;
  out.reserve(id_code.size() + history.size() + queue.size() + 1);
  out.insert(out.end(), id_code.begin(), id_code.end());
  out.insert(out.end(), history.begin(), history.end());
  out.insert(out.end(), queue.begin(), queue.end());
  out.push_back(degree);
  return out;
}

SimState::SimState(std::shared_ptr<const topo::Topology> topology, topo::TrafficSpec traffic,
                   std::vector<topo::TopologyEvent> events, SimConfig config, std::uint64_t seed)
    : topology_(std::move(topology)),
      traffic_(std::move(traffic)),
      pending_events_(std::move(events)),
      config_(config),
      traffic_rng_(Rng(seed).fork("traffic")) {
  if (!topology_) throw ContractError("SimState requires a topology");
  std::stable_sort(pending_events_.begin(), pending_events_.end(),
                   [](const auto& a, const auto& b) { return a.at_step < b.at_step; });
  for (RouterId r : topology_->routers()) routers_[r];
}

SimState reset(std::shared_ptr<const topo::Topology> topology, const topo::TrafficSpec& traffic,
               std::vector<topo::TopologyEvent> events, const SimConfig& config,
               std::uint64_t seed) {
  return SimState(std::move(topology), traffic, std::move(events), config, seed);
}

void SimState::trace(const std::string& line) {
  if (trace_) (*trace_) << "step=" << step_ << ' ' << line << '\n';
}

void SimState::apply_due_events(StepOutcome& out) {
  while (!pending_events_.empty() && pending_events_.front().at_step <= step_) {
    topo::TopologyEvent ev = pending_events_.front();
    pending_events_.erase(pending_events_.begin());
    auto next = std::make_shared<topo::Topology>(topo::apply_event(*topology_, ev));
    topology_ = next;

    if (const auto* rf = std::get_if<topo::RouterFailure>(&ev.kind)) {
      trace("event fail_router " + std::to_string(rf->id));
      auto it = routers_.find(rf->id);
      if (it != routers_.end()) {
        for (const Packet& p : it->second.queue) {
          ledger_[p.id].status = PacketStatus::lost;
          ledger_[p.id].finished_at = step_;
          ++lost_;
          out.lost.push_back(p.id);
          trace("lose pkt=" + std::to_string(p.id) + " reason=router_failure");
        }
        routers_.erase(it);
      }
    } else if (const auto* lf = std::get_if<topo::LinkFailure>(&ev.kind)) {
      trace("event fail_link " + std::to_string(lf->a) + " " + std::to_string(lf->b));
    } else {
      const auto& add = std::get<topo::RouterAddition>(ev.kind);
      trace("event add_router " + std::to_string(add.id));
      routers_[add.id];
    }

    // Packets in flight over a now-missing link are lost with the usual
    // loss penalty charged to the sender.
    for (auto it = flights_.begin(); it != flights_.end();) {
      if (!topology_->has_link(it->from, it->to)) {
        lose_flight(*it, out, "link_vanished");
        it = flights_.erase(it);
      } else {
        ++it;
      }
    }
  }
}

void SimState::lose_flight(const Flight& f, StepOutcome& out, const char* reason) {
  ledger_[f.pkt.id].status = PacketStatus::lost;
  ledger_[f.pkt.id].finished_at = step_;
  ++lost_;
  out.lost.push_back(f.pkt.id);
  AgentOutcome tr;
  tr.agent = f.from;
  tr.action = f.to;
  tr.packet_dst = f.pkt.dst;
  tr.packet_id = f.pkt.id;
  tr.reward = compute_reward(config_.reward, 1, 0, true);
  tr.done = true;
  tr.decided_at = f.sent_at;
  tr.queue_wait = f.queue_wait;
  tr.transit = (step_ - f.sent_at) + f.remaining;  // original link length
  out.transitions.push_back(tr);
  trace("lose pkt=" + std::to_string(f.pkt.id) + " reason=" + std::string(reason));
}

void SimState::generate_traffic() {
  const int k = traffic_rng_.poisson(traffic_.lambda);
  for (int n = 0; n < k; ++n) {
    const RouterId src =
        traffic_.sources[traffic_rng_.uniform_below(traffic_.sources.size())];
    const RouterId dst =
        traffic_.destinations[traffic_rng_.uniform_below(traffic_.destinations.size())];
    Packet p;
    p.id = static_cast<std::int64_t>(ledger_.size());
    p.src = src;
    p.dst = dst;
    p.created_at = step_;
    p.enqueued_at = step_;
    PacketRecord rec;
    rec.src = src;
    rec.dst = dst;
    rec.created_at = step_;
    ++generated_;
    trace("gen pkt=" + std::to_string(p.id) + " src=" + std::to_string(src) +
          " dst=" + std::to_string(dst));
    if (src == dst) {
      rec.status = PacketStatus::delivered;
      rec.finished_at = step_;
      ++delivered_;
      ledger_.push_back(rec);
      trace("deliver pkt=" + std::to_string(p.id) + " latency=0");
      continue;
    }
    auto it = routers_.find(src);
    if (it == routers_.end() ||
        static_cast<int>(it->second.queue.size()) >= config_.queue_capacity) {
      rec.status = PacketStatus::lost;
      rec.finished_at = step_;
      ++lost_;
      ledger_.push_back(rec);
      trace("lose pkt=" + std::to_string(p.id) + " reason=source_full");
      continue;
    }
    rec.status = PacketStatus::queued;
    ledger_.push_back(rec);
    it->second.queue.push_back(p);
  }
}

void SimState::execute_forwards(const std::map<RouterId, RouterId>& actions) {
  std::map<std::pair<std::pair<RouterId, RouterId>, bool>, int> admitted;  // per link direction
  for (const auto& [agent, target] : actions) {
    auto it = routers_.find(agent);
    if (it == routers_.end() || it->second.queue.empty()) continue;  // filtered upstream
    if (!topology_->has_link(agent, target)) continue;
    const auto link = *topology_->link(agent, target);
    const bool dir = target > agent;
    auto key = std::make_pair(std::make_pair(link.a, link.b), dir);
    if (admitted[key] >= link.bandwidth) {
      // Deferred by bandwidth: the packet stays at the queue head and no
      // transition is emitted; the decision was not executed.
      trace("defer router=" + std::to_string(agent) +
            " pkt=" + std::to_string(it->second.queue.front().id));
      continue;
    }
    ++admitted[key];
    Packet p = it->second.queue.front();
    it->second.queue.pop_front();
    Flight f;
    f.pkt = p;
    f.from = agent;
    f.to = target;
    f.remaining = link.length;
    f.sent_at = step_;
    f.queue_wait = std::max(0, step_ - p.enqueued_at - 1);
    flights_.push_back(f);
    ledger_[p.id].status = PacketStatus::in_flight;
    auto& hist = it->second.history;
    hist.push_front(target);
    while (static_cast<int>(hist.size()) > config_.obs.history) hist.pop_back();
    trace("fwd pkt=" + std::to_string(p.id) + " from=" + std::to_string(agent) +
          " to=" + std::to_string(target));
  }
}

void SimState::advance_flights(StepOutcome& out) {
  std::vector<Flight> arrivals;
  std::vector<Flight> still;
  still.reserve(flights_.size());
  for (Flight& f : flights_) {
    if (--f.remaining <= 0)
      arrivals.push_back(f);
    else
      still.push_back(f);
  }
  flights_ = std::move(still);

  for (Flight& f : arrivals) {
    AgentOutcome tr;
    tr.agent = f.from;
    tr.action = f.to;
    tr.packet_dst = f.pkt.dst;
    tr.packet_id = f.pkt.id;
    tr.decided_at = f.sent_at;
    tr.queue_wait = f.queue_wait;
    tr.transit = step_ - f.sent_at + 1;

    if (f.to == f.pkt.dst) {
      ledger_[f.pkt.id].status = PacketStatus::delivered;
      ledger_[f.pkt.id].finished_at = step_;
      ledger_[f.pkt.id].hop_count = f.pkt.hop_count + 1;
      ++delivered_;
      out.delivered.push_back(f.pkt.id);
      tr.reward = compute_reward(config_.reward, tr.transit, 0, false);
      tr.done = true;
      trace("deliver pkt=" + std::to_string(f.pkt.id) +
            " latency=" + std::to_string(step_ - f.pkt.created_at));
    } else {
      auto it = routers_.find(f.to);
      const int occupancy = it == routers_.end() ? config_.queue_capacity
                                                 : static_cast<int>(it->second.queue.size());
      if (occupancy >= config_.queue_capacity) {
        ledger_[f.pkt.id].status = PacketStatus::lost;
        ledger_[f.pkt.id].finished_at = step_;
        ++lost_;
        out.lost.push_back(f.pkt.id);
        tr.reward = compute_reward(config_.reward, tr.transit, 0, true);
        tr.done = true;
        trace("lose pkt=" + std::to_string(f.pkt.id) + " reason=full_queue at=" +
              std::to_string(f.to));
      } else {
        f.pkt.enqueued_at = step_;
        f.pkt.hop_count += 1;
        ledger_[f.pkt.id].status = PacketStatus::queued;
        ledger_[f.pkt.id].hop_count = f.pkt.hop_count;
        tr.t_q = occupancy;
        tr.reward = compute_reward(config_.reward, tr.transit, occupancy, false);
        tr.done = false;
        it->second.queue.push_back(f.pkt);
        trace("arrive pkt=" + std::to_string(f.pkt.id) + " at=" + std::to_string(f.to) +
              " tq=" + std::to_string(occupancy));
      }
    }
    out.transitions.push_back(tr);
  }
}

StepOutcome SimState::step(const std::map<RouterId, RouterId>& actions) {
  // Validate against the decision-time topology; a violation here is a policy
  // bug and halts the run. Actions invalidated by an event applied this step
  // (the policy could not have known) degrade to a hold instead.
  for (const auto& [agent, target] : actions) {
    auto it = routers_.find(agent);
    if (it == routers_.end())
      throw ContractError("action from unknown or failed router " + std::to_string(agent));
    if (it->second.queue.empty())
      throw ContractError("action from router " + std::to_string(agent) + " with an empty queue");
    const auto& nbrs = topology_->neighbors(agent);
    if (!std::binary_search(nbrs.begin(), nbrs.end(), target))
      throw ContractError("action " + std::to_string(agent) + "->" + std::to_string(target) +
                          " is not a link in the current topology");
  }
  StepOutcome out;
  apply_due_events(out);
  generate_traffic();
  execute_forwards(actions);
  advance_flights(out);
  ++step_;
  check_conservation();
  return out;
}

Observation SimState::observe(RouterId i) const {
  auto it = routers_.find(i);
  if (it == routers_.end())
    throw ContractError("observe: router " + std::to_string(i) + " is unknown or failed");
  const ObsConfig& oc = config_.obs;
  Observation o;
  o.id_code = id_code(i, oc.id_dim);

  o.history.assign(static_cast<std::size_t>(oc.history) * oc.id_dim, 0.0);
  int slot = 0;
  for (RouterId target : it->second.history) {
    if (slot >= oc.history) break;
    auto code = id_code(target, oc.id_dim);
    std::copy(code.begin(), code.end(), o.history.begin() + slot * oc.id_dim);
    ++slot;
  }

  o.queue.reserve(2 + static_cast<std::size_t>(oc.queue_dests) * oc.id_dim);
  o.queue.push_back(static_cast<double>(it->second.queue.size()) / 50.0);
  o.queue.push_back(static_cast<double>(config_.queue_capacity) / 50.0);
  o.queue.resize(2 + static_cast<std::size_t>(oc.queue_dests) * oc.id_dim, 0.0);
  int qslot = 0;
  for (const Packet& p : it->second.queue) {
    if (qslot >= oc.queue_dests) break;
    auto code = id_code(p.dst, oc.id_dim);
    std::copy(code.begin(), code.end(), o.queue.begin() + 2 + qslot * oc.id_dim);
    ++qslot;
  }

  o.degree = static_cast<double>(topology_->neighbors(i).size()) / oc.degree_norm;
  return o;
}

std::map<RouterId, Observation> SimState::observe_all() const {
  std::map<RouterId, Observation> out;
  for (RouterId r : topology_->routers()) out.emplace(r, observe(r));
  return out;
}

int SimState::queue_length(RouterId i) const {
  auto it = routers_.find(i);
  return it == routers_.end() ? 0 : static_cast<int>(it->second.queue.size());
}

std::map<RouterId, int> SimState::queue_lengths() const {
  std::map<RouterId, int> out;
  for (const auto& [r, st] : routers_) out[r] = static_cast<int>(st.queue.size());
  return out;
}

const Packet* SimState::queue_head(RouterId i) const {
  auto it = routers_.find(i);
  if (it == routers_.end() || it->second.queue.empty()) return nullptr;
  return &it->second.queue.front();
}

std::vector<RouterId> SimState::routers_with_packets() const {
  std::vector<RouterId> out;
  for (const auto& [r, st] : routers_)
    if (!st.queue.empty()) out.push_back(r);
  return out;
}

int SimState::backlog(RouterId x, RouterId z) const {
  auto it = routers_.find(x);
  if (it == routers_.end()) return 0;
  int n = 0;
  for (const Packet& p : it->second.queue)
    if (p.dst == z) ++n;
  return n;
}

std::int64_t SimState::queued_count() const {
  std::int64_t n = 0;
  for (const auto& [r, st] : routers_) n += static_cast<std::int64_t>(st.queue.size());
  return n;
}

void SimState::check_conservation() const {
  const std::int64_t accounted = delivered_ + lost_ + queued_count() + in_flight_count();
  if (accounted != generated_)
    throw ContractError("conservation violated at step " + std::to_string(step_) + ": generated " +
                        std::to_string(generated_) + " != accounted " + std::to_string(accounted));
}

Metrics SimState::metrics(int from_step, int to_step) const {
  Metrics m;
  m.delivery_rate = 1.0;
  std::vector<double> latencies;
  for (const auto& rec : ledger_) {
    if (rec.created_at < from_step || rec.created_at >= to_step) continue;
    ++m.created;
    switch (rec.status) {
      case PacketStatus::delivered:
        ++m.delivered;
        latencies.push_back(static_cast<double>(rec.finished_at - rec.created_at) *
                            config_.step_ms);
        break;
      case PacketStatus::lost:
        ++m.lost;
        break;
      default:
        ++m.unresolved;  // still queued or in flight: excluded from the rate
    }
  }
  const std::int64_t resolved = m.delivered + m.lost;
  if (resolved > 0) m.delivery_rate = static_cast<double>(m.delivered) / resolved;
  if (!latencies.empty()) {
    double sum = 0.0;
    for (double l : latencies) sum += l;
    const double mean = sum / latencies.size();
    m.avg_latency_ms = mean;
    if (latencies.size() > 1) {
      double ss = 0.0;
      for (double l : latencies) ss += (l - mean) * (l - mean);
      m.latency_std_ms = std::sqrt(ss / (latencies.size() - 1));
    }
  }
  return m;
}

std::string SimState::debug_serialize() const {
  std::ostringstream os;
  os << "step=" << step_ << " rng=" << traffic_rng_.state() << " gen=" << generated_
     << " del=" << delivered_ << " lost=" << lost_ << " topo_v=" << topology_->version() << '\n';
  for (const auto& [r, st] : routers_) {
    os << "r" << r << " q=[";
    for (const Packet& p : st.queue) os << p.id << ',';
    os << "] h=[";
    for (RouterId h : st.history) os << h << ',';
    os << "]\n";
  }
  for (const Flight& f : flights_)
    os << "fl pkt=" << f.pkt.id << ' ' << f.from << "->" << f.to << " rem=" << f.remaining << '\n';
  return os.str();
}

}  // namespace drama::sim
