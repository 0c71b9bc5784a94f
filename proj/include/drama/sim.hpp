#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "drama/rng.hpp"
#include "drama/topo.hpp"

namespace drama::sim {

using topo::RouterId;

struct ObsConfig {
  int id_dim = 8;        // identity code width
  int history = 8;       // remembered executed forwards
  int queue_dests = 10;  // leading queued-packet destinations encoded
  double degree_norm = 16.0;
  int dim() const { return id_dim + history * id_dim + 2 + queue_dests * id_dim + 1; }
};

struct RewardConfig {
  double r_lost = 100.0;
  double tau_l = 1.0;
  double tau_q = 1.0;
};

struct SimConfig {
  int queue_capacity = 50;
  RewardConfig reward;
  ObsConfig obs;
  double step_ms = 1.0;
};

/// -r_lost if the packet was lost, otherwise -(tau_q * t_q + tau_l * t_l).
/// t_q is the next-hop queue occupancy at the moment of enqueue, which equals
/// the packet's waiting time there under one-packet-per-step FIFO service.
double compute_reward(const RewardConfig& rc, int t_l, int t_q, bool lost);

/// Unit-variance pseudo-random identity code for a router id, stable across
/// runs; unseen ids get valid codes without retraining.
std::vector<double> id_code(RouterId id, int dim);

struct Packet {
  std::int64_t id = 0;
  RouterId src = 0, dst = 0;
  int created_at = 0;
  int enqueued_at = 0;  // step it entered its current queue
  int hop_count = 0;
};

struct Observation {
  std::vector<double> id_code;   // o_id
  std::vector<double> history;   // o_h: recent executed forwards, newest first
  std::vector<double> queue;     // o_q: occupancy/50, capacity/50, leading destination codes
  double degree = 0.0;           // o_d
  std::vector<double> flat() const;
};

enum class PacketStatus { queued, in_flight, delivered, lost };

struct PacketRecord {
  RouterId src = 0, dst = 0;
  int created_at = 0;
  PacketStatus status = PacketStatus::queued;
  int finished_at = -1;  // delivered_at or lost_at
  int hop_count = 0;
};

/// One resolved forwarding decision: the packet sent by `agent` toward
/// `action` has arrived (delivered, enqueued or lost). done=1 iff it was lost
/// or reached its destination.
struct AgentOutcome {
  RouterId agent = 0, action = 0, packet_dst = 0;
  std::int64_t packet_id = 0;
  double reward = 0.0;
  bool done = false;
  int decided_at = 0;   // step of the forward
  int queue_wait = 0;   // steps spent at `agent` before this forward
  int transit = 1;      // link length
  int t_q = 0;          // occupancy found at the next hop
};

struct StepOutcome {
  std::vector<AgentOutcome> transitions;
  std::vector<std::int64_t> delivered;
  std::vector<std::int64_t> lost;
};

struct Metrics {
  double delivery_rate = 1.0;  // delivered / (delivered + lost), 1.0 when empty
  std::optional<double> avg_latency_ms;
  double latency_std_ms = 0.0;
  std::int64_t created = 0, delivered = 0, lost = 0, unresolved = 0;
};

/// Discrete-time packet simulation. Step phases, in order: apply due topology
/// events, generate traffic, execute forwards subject to bandwidth, advance
/// in-flight packets and resolve arrivals, emit rewards, advance the clock.
class SimState {
 public:
  SimState(std::shared_ptr<const topo::Topology> topology, topo::TrafficSpec traffic,
           std::vector<topo::TopologyEvent> events, SimConfig config, std::uint64_t seed);

  /// actions[i] must be a current neighbor of i and i's queue must be
  /// nonempty; routers absent from the map hold their head packet.
  StepOutcome step(const std::map<RouterId, RouterId>& actions);

  int current_step() const { return step_; }
  const topo::Topology& topology() const { return *topology_; }
  std::shared_ptr<const topo::Topology> topology_ptr() const { return topology_; }
  const SimConfig& config() const { return config_; }
  const topo::TrafficSpec& traffic() const { return traffic_; }

  Observation observe(RouterId i) const;
  std::map<RouterId, Observation> observe_all() const;

  int queue_length(RouterId i) const;
  std::map<RouterId, int> queue_lengths() const;
  const Packet* queue_head(RouterId i) const;
  std::vector<RouterId> routers_with_packets() const;
  /// Packets queued at x whose destination is z (virtual per-destination backlog).
  int backlog(RouterId x, RouterId z) const;

  Metrics metrics(int from_step, int to_step) const;
  const std::vector<PacketRecord>& packet_ledger() const { return ledger_; }

  std::int64_t generated_count() const { return generated_; }
  std::int64_t delivered_count() const { return delivered_; }
  std::int64_t lost_count() const { return lost_; }
  std::int64_t in_flight_count() const { return static_cast<std::int64_t>(flights_.size()); }
  std::int64_t queued_count() const;

  /// generated == delivered + lost + queued + in-flight; throws on violation.
  void check_conservation() const;

  void set_trace(std::ostream* sink) { trace_ = sink; }
  std::string debug_serialize() const;

 private:
  struct RouterState {
    std::deque<Packet> queue;
    std::deque<RouterId> history;  // newest first, bounded by obs.history
  };
  struct Flight {
    Packet pkt;
    RouterId from = 0, to = 0;
    int remaining = 0;
    int sent_at = 0;
    int queue_wait = 0;
  };

  std::shared_ptr<const topo::Topology> topology_;
  topo::TrafficSpec traffic_;
  std::vector<topo::TopologyEvent> pending_events_;
  SimConfig config_;
  Rng traffic_rng_;
  int step_ = 0;
  std::map<RouterId, RouterState> routers_;
  std::vector<Flight> flights_;
  std::vector<PacketRecord> ledger_;
  std::int64_t generated_ = 0, delivered_ = 0, lost_ = 0;
  std::ostream* trace_ = nullptr;

  void apply_due_events(StepOutcome& out);
  void generate_traffic();
  void execute_forwards(const std::map<RouterId, RouterId>& actions);
  void advance_flights(StepOutcome& out);
  void lose_flight(const Flight& f, StepOutcome& out, const char* reason);
  void trace(const std::string& line);
};

/// Two calls with identical arguments yield bit-identical states.
SimState reset(std::shared_ptr<const topo::Topology> topology, const topo::TrafficSpec& traffic,
               std::vector<topo::TopologyEvent> events, const SimConfig& config,
               std::uint64_t seed);

}  // namespace drama::sim
