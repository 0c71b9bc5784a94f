// Command-line experiment runner: `drama train` fits a policy and writes a
// checkpoint plus its learning curve; `drama eval` runs a scenario grid and
// writes runs.csv / aggregate.csv.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drama/harness.hpp"

namespace {

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    auto dots = tok.find("..");
    if (dots != std::string::npos) {
      auto lo = std::stoull(tok.substr(0, dots));
      auto hi = std::stoull(tok.substr(dots + 2));
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(std::stoull(tok));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRAMA packet-routing simulator and experiment harness"};
  app.require_subcommand(1);

  // ---- shared knobs ----
  std::string topology;
  std::string policy = "drama";
  std::string lambda_list, seed_list;
  std::string checkpoint, out_dir;
  int comm_rounds = 2;
  std::string ablation = "full";
  int quantize_bits = -1;
  int msg_interval = -1;
  double ec_weight = 1.0;
  int episodes = 200;
  int jobs = 0;
  bool trace = false;

  auto* tr = app.add_subcommand("train", "train a policy and save a checkpoint");
  tr->add_option("--topology", topology, "topology file")->required();
  tr->add_option("--policy", policy, "drama | drama_minus | qrouting")
      ->check(CLI::IsMember({"drama", "drama_minus", "qrouting"}));
  tr->add_option("--lambda", lambda_list, "training load (single value)");
  std::uint64_t train_seed = 1;
  tr->add_option("--seed", train_seed, "training seed");
  tr->add_option("--episodes", episodes, "training episodes (512 steps each)");
  tr->add_option("--comm-rounds", comm_rounds, "communication rounds C");
  tr->add_option("--ablation", ablation, "full | qsl_only | oel_qsl | ecl_qsl")
      ->check(CLI::IsMember({"full", "qsl_only", "oel_qsl", "ecl_qsl"}));
  tr->add_option("--quantize-bits", quantize_bits, "0 = float messages, 1 = 1-bit");
  tr->add_option("--msg-interval", msg_interval, "broadcast every K steps");
  tr->add_option("--ec-weight", ec_weight, "weight of the estimated-cost loss");
  int batch = 64, train_interval = 1, warmup = 1000;
  double lr = 1e-3;
  tr->add_option("--batch", batch, "minibatch size B");
  tr->add_option("--train-interval", train_interval, "optimize every u env steps");
  tr->add_option("--warmup", warmup, "replay warmup transitions");
  tr->add_option("--lr", lr, "learning rate");
  tr->add_option("--checkpoint", checkpoint, "output checkpoint path")->required();
  tr->add_option("--out", out_dir, "directory for the learning curve");

  auto* ev = app.add_subcommand("eval", "run a scenario grid and export metrics");
  ev->add_option("--topology", topology, "topology file")->required();
  std::string scenario = "custom";
  ev->add_option("--scenario", scenario,
                 "load_sweep | ablation | comm_rounds | overhead | link_failure | node_failure | "
                 "node_addition | custom")
      ->check(CLI::IsMember({"load_sweep", "ablation", "comm_rounds", "overhead", "link_failure",
                             "node_failure", "node_addition", "custom"}));
  ev->add_option("--policy", policy, "drama | drama_minus | spf | bp | qrouting")
      ->check(CLI::IsMember({"drama", "drama_minus", "spf", "bp", "qrouting"}));
  ev->add_option("--lambda", lambda_list, "comma list, e.g. 1,2,3,4");
  ev->add_option("--seeds", seed_list, "comma list or range, e.g. 1..10");
  ev->add_option("--episodes", episodes, "training episodes for scenarios that train");
  ev->add_option("--comm-rounds", comm_rounds, "C for scenarios that train");
  ev->add_option("--ablation", ablation, "architecture for scenarios that train");
  ev->add_option("--quantize-bits", quantize_bits, "override message quantization at eval");
  ev->add_option("--msg-interval", msg_interval, "override broadcast interval at eval");
  ev->add_option("--ec-weight", ec_weight, "EC loss weight for scenarios that train");
  ev->add_option("--checkpoint", checkpoint, "checkpoint for learned policies");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--jobs", jobs, "parallel cells (0 = hardware)");
  ev->add_flag("--trace", trace, "write per-step event logs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tr->parsed()) {
      auto lambdas = parse_double_list(lambda_list);
      drama::topo::LoadedTopology world = drama::topo::load_topology_file(topology);
      drama::sim::SimConfig sim_cfg;
      drama::train::TrainConfig tc;
      tc.episodes = episodes;
      tc.batch = batch;
      tc.train_interval = train_interval;
      tc.warmup = warmup;
      tc.lr = lr;
      tc.ec_weight = policy == "drama_minus" ? 0.0 : ec_weight;
      if (!lambdas.empty()) tc.lambda_override = lambdas.front();

      if (policy == "qrouting") {
        auto res = drama::harness::qrouting_train_run(tc, world, sim_cfg, train_seed, 0.1);
        drama::harness::save_qtable(res.table, checkpoint);
        if (!out_dir.empty()) {
          std::filesystem::create_directories(out_dir);
          drama::harness::export_curve(res.curve, out_dir + "/curve.csv");
        }
        std::cout << "saved qtable checkpoint to " << checkpoint << " ("
                  << res.table.entry_count() << " entries)\n";
      } else {
        drama::agent::AgentConfig ac;
        ac.comm_rounds = comm_rounds;
        ac.ablation = drama::agent::ablation_from_string(ablation);
        if (quantize_bits >= 0) ac.quantize_bits = quantize_bits;
        if (msg_interval >= 1) ac.message_interval = msg_interval;
        auto res = drama::train::train_run(tc, ac, world, sim_cfg, train_seed);
        drama::harness::save_checkpoint(*res.model, checkpoint);
        if (!out_dir.empty()) {
          std::filesystem::create_directories(out_dir);
          drama::harness::export_curve(res.curve, out_dir + "/curve.csv");
        }
        const auto& last = res.curve.back();
        std::cout << "saved checkpoint to " << checkpoint << " after " << res.optimizer_steps
                  << " optimizer steps; final episode delivery " << last.delivery_rate << "\n";
      }
      return 0;
    }

    drama::harness::Scenario s;
    s.name = scenario;
    s.topology_path = topology;
    s.policy = policy;
    s.lambdas = parse_double_list(lambda_list);
    s.seeds = parse_seed_list(seed_list);
    if (!checkpoint.empty()) s.checkpoint_path = checkpoint;
    s.agent.comm_rounds = comm_rounds;
    s.agent.ablation = drama::agent::ablation_from_string(ablation);
    if (quantize_bits >= 0) s.quantize_bits = quantize_bits;
    if (msg_interval >= 1) s.message_interval = msg_interval;
    s.train.episodes = episodes;
    s.train.ec_weight = ec_weight;
    s.out_dir = out_dir;
    s.trace = trace;
    s.jobs = jobs;
    auto records = drama::harness::run_scenario(s);
    std::cout << "wrote " << records.size() << " run records to " << out_dir << "/runs.csv\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
