#include "drama/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

namespace drama::harness {

using topo::RouterId;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

bool RunRecord::same_results(const RunRecord& o) const {
  return scenario == o.scenario && policy == o.policy && variant == o.variant &&
         lambda == o.lambda && seed == o.seed && delivery_rate == o.delivery_rate &&
         avg_latency_ms == o.avg_latency_ms && latency_std_ms == o.latency_std_ms &&
         overhead_bits == o.overhead_bits;
}

double overhead_bits_per_step(const agent::AgentConfig& cfg, int obs_dim) {
  // Width of what a router actually broadcasts: encoded messages for modes
  // with an encoder, raw observations otherwise.
  const int width = (cfg.ablation == agent::Ablation::qsl_only ||
                     cfg.ablation == agent::Ablation::ecl_qsl)
                        ? obs_dim
                        : cfg.message_dim;
  const double bits = cfg.quantize_bits == 1 ? 1.0 : 32.0;
  return width * bits / static_cast<double>(cfg.message_interval);
}

sim::Metrics run_episode(const EpisodeSpec& spec) {
  if (!spec.world) throw ContractError("run_episode: no world");
  topo::TrafficSpec traffic = spec.world->traffic;
  if (spec.lambda > 0.0) traffic.lambda = spec.lambda;
  std::vector<topo::TopologyEvent> events = spec.world->events;
  events.insert(events.end(), spec.extra_events.begin(), spec.extra_events.end());
  sim::SimConfig sim_cfg;
  auto topology = std::make_shared<topo::Topology>(spec.world->topology);
  sim::SimState st = sim::reset(topology, traffic, std::move(events), sim_cfg, spec.seed);
  if (spec.trace) st.set_trace(spec.trace);

  Rng policy_rng = Rng(spec.seed).fork("policy");
  baselines::SpfRouter spf;
  agent::MessageState msgs;

  for (int s = 0; s < spec.steps; ++s) {
    std::map<RouterId, RouterId> actions;
    if (spec.policy == "drama") {
      if (!spec.drama) throw ContractError("drama episode without a model");
      actions = agent::act_all(*spec.drama, st, spec.epsilon, policy_rng, &msgs);
    } else {
      for (RouterId i : st.routers_with_packets()) {
        const sim::Packet* head = st.queue_head(i);
        std::optional<RouterId> next;
        if (spec.policy == "spf") {
          next = spf.decide(st.topology(), i, head->dst);
        } else if (spec.policy == "bp") {
          next = baselines::bp_decide(st, spf, i, head->dst);
        } else if (spec.policy == "qrouting") {
          if (!spec.qtable) throw ContractError("qrouting episode without a table");
          next = spec.qtable->decide(st.topology(), i, head->dst, spec.epsilon, policy_rng);
        } else {
          throw ContractError("unknown policy '" + spec.policy + "'");
        }
        if (next) actions[i] = *next;
      }
    }
    sim::StepOutcome out = st.step(actions);
    if (spec.policy == "qrouting") {
      for (const sim::AgentOutcome& ao : out.transitions) {
        const bool lost = ao.done && ao.action != ao.packet_dst;
        if (lost) continue;  // no delivery-time feedback from a dropped packet
        const double next_min = ao.action == ao.packet_dst
                                    ? 0.0
                                    : spec.qtable->next_min(st.topology(), ao.action, ao.packet_dst);
        spec.qtable->value(st.topology(), ao.agent, ao.packet_dst, ao.action);  // ensure entry
        spec.qtable->update(ao.agent, ao.action, ao.packet_dst, ao.queue_wait, ao.transit,
                            next_min);
      }
    }
  }
  return st.metrics(0, spec.steps);
}

QTrainResult qrouting_train_run(const train::TrainConfig& cfg, const topo::LoadedTopology& world,
                                const sim::SimConfig& sim_cfg, std::uint64_t seed, double alpha) {
  QTrainResult result;
  result.table = baselines::QTable(alpha, baselines::QTable::InitMode::hop_estimate);
  topo::TrafficSpec traffic = world.traffic;
  if (cfg.lambda_override) traffic.lambda = *cfg.lambda_override;
  auto topology = std::make_shared<topo::Topology>(world.topology);
  Rng explore = Rng(seed).fork("explore");
  long env_steps = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const std::uint64_t ep_seed = Rng(seed).fork("episode." + std::to_string(ep)).state();
    sim::SimState st = sim::reset(topology, traffic, world.events, sim_cfg, ep_seed);
    double last_eps = train::epsilon_at(cfg, env_steps);
    for (int s = 0; s < cfg.steps_per_episode; ++s) {
      const double eps = train::epsilon_at(cfg, env_steps);
      last_eps = eps;
      std::map<RouterId, RouterId> actions;
      for (RouterId i : st.routers_with_packets()) {
        auto next = result.table.decide(st.topology(), i, st.queue_head(i)->dst, eps, explore);
        if (next) actions[i] = *next;
      }
      sim::StepOutcome out = st.step(actions);
      for (const sim::AgentOutcome& ao : out.transitions) {
        const bool lost = ao.done && ao.action != ao.packet_dst;
        if (lost) continue;
        const double next_min = ao.action == ao.packet_dst
                                    ? 0.0
                                    : result.table.next_min(st.topology(), ao.action, ao.packet_dst);
        result.table.value(st.topology(), ao.agent, ao.packet_dst, ao.action);  // ensure entry
        result.table.update(ao.agent, ao.action, ao.packet_dst, ao.queue_wait, ao.transit,
                            next_min);
      }
      ++env_steps;
    }
    sim::Metrics m = st.metrics(0, cfg.steps_per_episode);
    train::EpisodeRecord rec;
    rec.episode = ep;
    rec.env_steps = env_steps;
    rec.epsilon = last_eps;
    rec.delivery_rate = m.delivery_rate;
    rec.avg_latency_ms = m.avg_latency_ms;
    result.curve.push_back(rec);
  }
  return result;
}

namespace {

struct Cell {
  std::string variant;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::vector<topo::TopologyEvent> extra_events;
  // overhead variants:
  int quantize_bits = 0;
  int message_interval = 1;
  // ablation / comm_rounds training cells evaluate every lambda:
  bool trains = false;
  agent::AgentConfig train_agent_cfg;
};

std::vector<std::uint64_t> default_seeds(std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i + 1;
  return out;
}

/// Non-source, non-destination routers: the candidates for node failure.
std::vector<RouterId> relay_routers(const topo::LoadedTopology& world) {
  std::vector<RouterId> out;
  for (RouterId r : world.topology.routers()) {
    const auto& s = world.traffic.sources;
    const auto& d = world.traffic.destinations;
    if (std::binary_search(s.begin(), s.end(), r)) continue;
    if (std::binary_search(d.begin(), d.end(), r)) continue;
    out.push_back(r);
  }
  return out;
}

void run_cells_parallel(int jobs, std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<RunRecord> run_scenario(const Scenario& s) {
  topo::LoadedTopology world = topo::load_topology_file(s.topology_path);
  const sim::SimConfig sim_cfg;
  const int obs_dim = sim_cfg.obs.dim();

  std::vector<double> lambdas = s.lambdas.empty() ? std::vector<double>{world.traffic.lambda}
                                                  : s.lambdas;
  const bool failure_scenario = s.name == "link_failure" || s.name == "node_failure";
  std::vector<std::uint64_t> seeds =
      s.seeds.empty() ? default_seeds(failure_scenario ? 50 : 10) : s.seeds;

  const bool learned = s.policy == "drama" || s.policy == "drama_minus";
  std::optional<agent::Model> model;
  std::uint64_t model_hash_before = 0;
  if (learned && s.name != "ablation" && s.name != "comm_rounds") {
    if (!s.checkpoint_path)
      throw ContractError("scenario '" + s.name + "' with policy '" + s.policy +
                          "' needs --checkpoint (train one first)");
    model = load_checkpoint(*s.checkpoint_path);
    if (s.quantize_bits || s.message_interval)
      model = model->with_message_flags(s.quantize_bits.value_or(model->config().quantize_bits),
                                        s.message_interval.value_or(model->config().message_interval));
    model_hash_before = model->params().content_hash();
  }

  // ---- enumerate cells ----
  std::vector<Cell> cells;
  if (s.name == "load_sweep" || s.name == "custom") {
    for (double l : lambdas)
      for (auto seed : seeds) {
        Cell c;
        c.variant = s.policy;
        c.lambda = l;
        c.seed = seed;
        cells.push_back(c);
      }
  } else if (s.name == "overhead") {
    struct V {
      const char* name;
      int qbits, interval;
    };
    const V variants[] = {{"full", 0, 1}, {"q1", 1, 1}, {"h10", 0, 10}, {"q1h10", 1, 10}};
    for (const V& v : variants)
      for (double l : lambdas)
        for (auto seed : seeds) {
          Cell c;
          c.variant = v.name;
          c.lambda = l;
          c.seed = seed;
          c.quantize_bits = v.qbits;
          c.message_interval = v.interval;
          cells.push_back(c);
        }
  } else if (failure_scenario) {
    for (double l : lambdas)
      for (auto seed : seeds) {
        Cell c;
        c.variant = s.policy;
        c.lambda = l;
        c.seed = seed;
        Rng pick = Rng(seed).fork("failure");
        if (s.name == "link_failure") {
          std::vector<topo::Link> links;
          for (const auto& [k, link] : world.topology.links()) links.push_back(link);
          const auto& link = links[pick.uniform_below(links.size())];
          c.extra_events.push_back({0, topo::LinkFailure{link.a, link.b}});
          c.variant = s.policy + ":link" + std::to_string(link.a) + "-" + std::to_string(link.b);
        } else {
          auto relays = relay_routers(world);
          if (relays.empty()) throw ContractError("node_failure: no relay routers to fail");
          const RouterId r = relays[pick.uniform_below(relays.size())];
          c.extra_events.push_back({0, topo::RouterFailure{r}});
          c.variant = s.policy + ":node" + std::to_string(r);
        }
        cells.push_back(c);
      }
  } else if (s.name == "node_addition") {
    // A fresh router bridging a source and a destination, present from step 0.
    const RouterId fresh = world.topology.routers().back() + 1;
    const RouterId src = world.traffic.sources.front();
    const RouterId dst = world.traffic.destinations.back();
    topo::RouterAddition add{fresh, {topo::Link::make(fresh, src), topo::Link::make(fresh, dst)}};
    for (double l : lambdas)
      for (auto seed : seeds) {
        Cell base;
        base.variant = "base";
        base.lambda = l;
        base.seed = seed;
        cells.push_back(base);
        Cell c;
        c.variant = "added";
        c.lambda = l;
        c.seed = seed;
        c.extra_events.push_back({0, add});
        cells.push_back(c);
      }
  } else if (s.name == "ablation" || s.name == "comm_rounds") {
    if (!learned) throw ContractError("scenario '" + s.name + "' evaluates drama policies");
    if (s.name == "ablation") {
      auto modes = s.ablation_modes.empty()
                       ? std::vector<std::string>{"full", "oel_qsl", "qsl_only", "ecl_qsl"}
                       : s.ablation_modes;
      for (const auto& mode : modes)
        for (auto seed : seeds) {
          Cell c;
          c.variant = mode;
          c.seed = seed;
          c.trains = true;
          c.train_agent_cfg = s.agent;
          c.train_agent_cfg.ablation = agent::ablation_from_string(mode);
          cells.push_back(c);
        }
    } else {
      auto rounds = s.comm_round_values.empty() ? std::vector<int>{0, 1, 2, 3}
                                                : s.comm_round_values;
      for (int C : rounds)
        for (auto seed : seeds) {
          Cell c;
          c.variant = "C" + std::to_string(C);
          c.seed = seed;
          c.trains = true;
          c.train_agent_cfg = s.agent;
          c.train_agent_cfg.comm_rounds = C;
          cells.push_back(c);
        }
    }
  } else {
    throw ContractError("unknown scenario '" + s.name + "'");
  }

  // ---- execute ----
  const double ec_weight = s.policy == "drama_minus" ? 0.0 : s.train.ec_weight;
  std::vector<std::vector<RunRecord>> results(cells.size());
  run_cells_parallel(s.jobs, cells.size(), [&](std::size_t ci) {
    const Cell& cell = cells[ci];
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RunRecord> recs;

    if (cell.trains) {
      train::TrainConfig tc = s.train;
      tc.ec_weight = ec_weight;
      train::TrainResult tr = train::train_run(tc, cell.train_agent_cfg, world, sim_cfg, cell.seed);
      for (double l : lambdas) {
        EpisodeSpec spec;
        spec.world = &world;
        spec.lambda = l;
        spec.seed = Rng(cell.seed).fork("eval").state();
        spec.steps = s.eval_steps;
        spec.policy = "drama";
        spec.drama = tr.model.get();
        sim::Metrics m = run_episode(spec);
        RunRecord r;
        r.scenario = s.name;
        r.policy = s.policy;
        r.variant = cell.variant;
        r.lambda = l;
        r.seed = cell.seed;
        r.delivery_rate = m.delivery_rate;
        r.avg_latency_ms = m.avg_latency_ms;
        r.latency_std_ms = m.latency_std_ms;
        r.overhead_bits = overhead_bits_per_step(cell.train_agent_cfg, obs_dim);
        r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        recs.push_back(r);
      }
    } else {
      EpisodeSpec spec;
      spec.world = &world;
      spec.lambda = cell.lambda;
      spec.seed = cell.seed;
      spec.steps = s.eval_steps;
      spec.extra_events = cell.extra_events;
      spec.policy = learned ? "drama" : s.policy;

      std::optional<agent::Model> variant_model;
      baselines::QTable table(s.qrouting_alpha);
      if (learned) {
        if (s.name == "overhead") {
          variant_model = model->with_message_flags(cell.quantize_bits, cell.message_interval);
          spec.drama = &*variant_model;
        } else {
          spec.drama = &*model;
        }
      } else if (s.policy == "qrouting") {
        if (s.checkpoint_path) table = load_qtable(*s.checkpoint_path);
        spec.qtable = &table;
      }

      std::ofstream trace_file;
      if (s.trace && !s.out_dir.empty()) {
        std::filesystem::create_directories(s.out_dir);
        trace_file.open(s.out_dir + "/trace_" + cell.variant + "_l" + fmt(cell.lambda) + "_s" +
                        std::to_string(cell.seed) + ".log");
        spec.trace = &trace_file;
      }
      sim::Metrics m = run_episode(spec);
      RunRecord r;
      r.scenario = s.name;
      r.policy = s.policy;
      r.variant = cell.variant;
      r.lambda = cell.lambda;
      r.seed = cell.seed;
      r.delivery_rate = m.delivery_rate;
      r.avg_latency_ms = m.avg_latency_ms;
      r.latency_std_ms = m.latency_std_ms;
      if (learned) {
        agent::AgentConfig oc = model->config();
        if (s.name == "overhead") {
          oc.quantize_bits = cell.quantize_bits;
          oc.message_interval = cell.message_interval;
        }
        r.overhead_bits = overhead_bits_per_step(oc, obs_dim);
      }
      r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      recs.push_back(r);
    }
    results[ci] = std::move(recs);
  });

  if (model && model->params().content_hash() != model_hash_before)
    throw ContractError("evaluation mutated model parameters");

  std::vector<RunRecord> flat;
  for (auto& v : results)
    for (auto& r : v) flat.push_back(std::move(r));
  if (!s.out_dir.empty()) export_metrics(flat, s.out_dir);
  return flat;
}

void export_metrics(const std::vector<RunRecord>& records, const std::string& dir) {
  if (records.empty()) throw ContractError("export_metrics: no records");
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/runs.csv");
    if (!f) throw ContractError("cannot write " + dir + "/runs.csv");
    f << "scenario,policy,variant,lambda,seed,delivery_rate,avg_latency_ms,latency_std_ms,"
         "overhead_bits,wall_time_s\n";
    for (const auto& r : records)
      f << r.scenario << ',' << r.policy << ',' << r.variant << ',' << fmt(r.lambda) << ','
        << r.seed << ',' << fmt(r.delivery_rate) << ',' << fmt_opt(r.avg_latency_ms) << ','
        << fmt(r.latency_std_ms) << ',' << fmt(r.overhead_bits) << ',' << fmt(r.wall_time_s)
        << '\n';
  }
  {
    // group by (scenario, policy, variant, lambda)
    std::map<std::tuple<std::string, std::string, std::string, double>,
             std::vector<const RunRecord*>>
        cells;
    for (const auto& r : records)
      cells[{r.scenario, r.policy, r.variant, r.lambda}].push_back(&r);
    std::ofstream f(dir + "/aggregate.csv");
    if (!f) throw ContractError("cannot write " + dir + "/aggregate.csv");
    f << "scenario,policy,variant,lambda,n,delivery_mean,delivery_std,latency_mean,latency_std,"
         "overhead_bits\n";
    for (const auto& [key, rs] : cells) {
      const auto& [sc, pol, var, lam] = key;
      double dsum = 0.0;
      std::vector<double> lats;
      for (const auto* r : rs) {
        dsum += r->delivery_rate;
        if (r->avg_latency_ms) lats.push_back(*r->avg_latency_ms);
      }
      const double dmean = dsum / rs.size();
      double dvar = 0.0;
      for (const auto* r : rs) dvar += (r->delivery_rate - dmean) * (r->delivery_rate - dmean);
      const double dstd = rs.size() > 1 ? std::sqrt(dvar / (rs.size() - 1)) : 0.0;
      double lmean = 0.0, lstd = 0.0;
      if (!lats.empty()) {
        for (double l : lats) lmean += l;
        lmean /= lats.size();
        if (lats.size() > 1) {
          double lvar = 0.0;
          for (double l : lats) lvar += (l - lmean) * (l - lmean);
          lstd = std::sqrt(lvar / (lats.size() - 1));
        }
      }
      f << sc << ',' << pol << ',' << var << ',' << fmt(lam) << ',' << rs.size() << ','
        << fmt(dmean) << ',' << fmt(dstd) << ',' << (lats.empty() ? "" : fmt(lmean)) << ','
        << (lats.empty() ? "" : fmt(lstd)) << ',' << fmt(rs[0]->overhead_bits) << '\n';
    }
  }
}

std::vector<RunRecord> parse_records(const std::string& runs_csv_path) {
  std::ifstream f(runs_csv_path);
  if (!f) throw ParseError("cannot open " + runs_csv_path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty metrics file");
  std::vector<RunRecord> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 10)
      throw ParseError("line " + std::to_string(lineno) + ": expected 10 columns");
    RunRecord r;
    r.scenario = cols[0];
    r.policy = cols[1];
    r.variant = cols[2];
    r.lambda = std::stod(cols[3]);
    r.seed = std::stoull(cols[4]);
    r.delivery_rate = std::stod(cols[5]);
    if (!cols[6].empty()) r.avg_latency_ms = std::stod(cols[6]);
    r.latency_std_ms = std::stod(cols[7]);
    r.overhead_bits = std::stod(cols[8]);
    r.wall_time_s = std::stod(cols[9]);
    out.push_back(r);
  }
  return out;
}

void export_curve(const std::vector<train::EpisodeRecord>& curve, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write " + path);
  f << "episode,env_steps,epsilon,delivery_rate,avg_latency_ms,td_loss,ec_loss\n";
  for (const auto& r : curve)
    f << r.episode << ',' << r.env_steps << ',' << fmt(r.epsilon) << ',' << fmt(r.delivery_rate)
      << ',' << fmt_opt(r.avg_latency_ms) << ',' << fmt(r.td_loss) << ',' << fmt(r.ec_loss)
      << '\n';
}

void save_checkpoint(const agent::Model& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write checkpoint " + path);
  f << m.save_checkpoint_json();
}

agent::Model load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return agent::Model::load_checkpoint_json(ss.str());
}

void save_qtable(const baselines::QTable& q, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write qtable " + path);
  f << q.to_json();
}

baselines::QTable load_qtable(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("cannot open qtable " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return baselines::QTable::from_json(ss.str());
}

}  // namespace drama::harness
