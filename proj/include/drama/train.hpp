#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "drama/agent.hpp"
#include "drama/sim.hpp"
#include "drama/topo.hpp"

namespace drama::train {

using topo::RouterId;

/// Joint view of the network at one step boundary: topology version, every
/// active router's observation, and the queue-length snapshot the EC loss
/// prices paths against.
struct Snapshot {
  int step = 0;
  std::shared_ptr<const topo::Topology> topology;
  std::map<RouterId, sim::Observation> obs;
  std::map<RouterId, int> queue_len;
};

std::shared_ptr<const Snapshot> make_snapshot(const sim::SimState& st);

/// One acting agent's experience row. wsp is the weighted-shortest-path cost
/// of the chosen hop priced at the before-snapshot, absent when the
/// destination was unreachable from the chosen neighbor.
struct Transition {
  std::shared_ptr<const Snapshot> before, after;
  RouterId agent = 0, action = 0, dst = 0;
  double reward = 0.0;
  bool done = false;
  std::optional<double> wsp;
};

/// Ring buffer with FIFO eviction; sampling is uniform without replacement
/// within a batch.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const;
  void push_raw(Transition t);
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

/// Stores the transition, computing wsp from the before-snapshot.
void push(ReplayBuffer& buffer, Transition t);

/// y_i = r_i + (1 - d_i) * gamma * max over the action router's current
/// neighbors of Q under the target parameters (eval mode). A next router with
/// no neighbors, or one no longer in the topology, drops the bootstrap term.
std::vector<double> target_values(const agent::Model& target,
                                  std::span<const Transition* const> batch, double gamma);

/// Q(O; theta) for each row's (agent, action) pair through the full pipeline.
nn::ValueId predicted_q(nn::Graph& g, agent::Model& m, std::span<const Transition* const> batch);

/// Mean squared TD error against precomputed targets (train-mode forward).
double td_loss(agent::Model& m, std::span<const Transition* const> batch,
               std::span<const double> targets, Rng& dropout_rng);

/// Mean of (Q + wsp)^2 over the batch; rows without wsp contribute zero.
double ec_loss(agent::Model& m, std::span<const Transition* const> batch, Rng& dropout_rng);

struct TrainConfig {
  double gamma = 0.99;
  double beta = 0.01;       // target soft-update coefficient
  int train_interval = 1;   // u
  int batch = 64;           // B
  int warmup = 1000;        // transitions before training starts
  double lr = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  int episodes = 200;
  int steps_per_episode = 512;
  std::size_t replay_capacity = 100000;
  double ec_weight = 1.0;  // 0 disables the EC constraint
  double eps_start = 1.0, eps_end = 0.05;
  double eps_fraction = 0.5;  // fraction of total env steps spent annealing
  std::optional<double> lambda_override;
};

double epsilon_at(const TrainConfig& cfg, long env_step);

/// target <- beta * online + (1 - beta) * target, exactly.
void soft_update(nn::ParamStore& target, const nn::ParamStore& online, double beta);

struct LossValues {
  double td = 0.0, ec = 0.0;
};

/// One optimization step: sample B, minimize TD + ec_weight * EC, then soft
/// update. No-op (nullopt) while the buffer is below warmup.
std::optional<LossValues> train_step(agent::Model& online, agent::Model& target,
                                     ReplayBuffer& buffer, const TrainConfig& cfg, Rng& sample_rng,
                                     Rng& dropout_rng);

struct EpisodeRecord {
  int episode = 0;
  long env_steps = 0;
  double epsilon = 0.0;
  double delivery_rate = 0.0;
  std::optional<double> avg_latency_ms;
  double td_loss = 0.0, ec_loss = 0.0;
};

struct TrainResult {
  std::unique_ptr<agent::Model> model;
  std::vector<EpisodeRecord> curve;
  long optimizer_steps = 0;
};

/// Full training loop: episodes of rollout with epsilon-greedy exploration,
/// replay insertion, periodic optimization, per-episode metrics.
TrainResult train_run(const TrainConfig& cfg, const agent::AgentConfig& agent_cfg,
                      const topo::LoadedTopology& world, const sim::SimConfig& sim_cfg,
                      std::uint64_t seed);

}  // namespace drama::train
