#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drama/agent.hpp"
#include "drama/baselines.hpp"
#include "drama/sim.hpp"
#include "drama/topo.hpp"
#include "drama/train.hpp"

namespace drama::harness {

/// One experiment grid. The evaluation protocol is one 512-step simulation
/// per seed; aggregates report mean +- sample std per cell.
struct Scenario {
  std::string name = "custom";  // load_sweep | ablation | comm_rounds | overhead |
                                // link_failure | node_failure | node_addition | custom
  std::string topology_path;
  std::vector<double> lambdas;        // empty: the topology file's lambda
  std::vector<std::uint64_t> seeds;   // empty: 1..10 (1..50 for failure scenarios)
  std::string policy = "spf";         // drama | drama_minus | spf | bp | qrouting
  int eval_steps = 512;
  std::optional<std::string> checkpoint_path;  // required for drama eval scenarios

  agent::AgentConfig agent;   // architecture for scenarios that train
  train::TrainConfig train;   // training budget for scenarios that train
  std::vector<std::string> ablation_modes;  // ablation scenario; default all four
  std::vector<int> comm_round_values;       // comm_rounds scenario; default 0..3

  std::optional<int> quantize_bits;      // eval-time message handling overrides
  std::optional<int> message_interval;

  std::string out_dir;  // when set: runs.csv, aggregate.csv (and traces)
  bool trace = false;
  int jobs = 0;  // parallel cells; 0 = hardware concurrency
  double qrouting_alpha = 0.1;
};

struct RunRecord {
  std::string scenario, policy, variant;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double delivery_rate = 0.0;
  std::optional<double> avg_latency_ms;
  double latency_std_ms = 0.0;
  double overhead_bits = 0.0;  // per step per router
  double wall_time_s = 0.0;

  bool same_results(const RunRecord& o) const;  // every field except wall time
};

std::vector<RunRecord> run_scenario(const Scenario& s);

/// runs.csv (one row per record) and aggregate.csv (mean +- sample std per
/// scenario cell). Floats round-trip exactly.
void export_metrics(const std::vector<RunRecord>& records, const std::string& dir);
std::vector<RunRecord> parse_records(const std::string& runs_csv_path);

void export_curve(const std::vector<train::EpisodeRecord>& curve, const std::string& path);

void save_checkpoint(const agent::Model& m, const std::string& path);
agent::Model load_checkpoint(const std::string& path);
void save_qtable(const baselines::QTable& q, const std::string& path);
baselines::QTable load_qtable(const std::string& path);

/// Bits broadcast per step per router: transmitted width x bits per entry /
/// broadcast interval.
double overhead_bits_per_step(const agent::AgentConfig& cfg, int obs_dim);

struct QTrainResult {
  baselines::QTable table{0.1};
  std::vector<train::EpisodeRecord> curve;
};

/// Online tabular training with the shared epsilon schedule.
QTrainResult qrouting_train_run(const train::TrainConfig& cfg, const topo::LoadedTopology& world,
                                const sim::SimConfig& sim_cfg, std::uint64_t seed, double alpha);

/// Single seeded evaluation episode used by scenario cells and tests.
struct EpisodeSpec {
  const topo::LoadedTopology* world = nullptr;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  int steps = 512;
  std::vector<topo::TopologyEvent> extra_events;
  std::string policy;                      // spf | bp | qrouting | drama
  const agent::Model* drama = nullptr;     // frozen, shared
  baselines::QTable* qtable = nullptr;     // owned by the cell; updated online
  double epsilon = 0.0;
  std::ostream* trace = nullptr;
};

sim::Metrics run_episode(const EpisodeSpec& spec);

}  // namespace drama::harness
