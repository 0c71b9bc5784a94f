#include "drama/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drama::train {

std::shared_ptr<const Snapshot> make_snapshot(const sim::SimState& st) {
  auto s = std::make_shared<Snapshot>();
  s->step = st.current_step();
  s->topology = st.topology_ptr();
  s->obs = st.observe_all();
  s->queue_len = st.queue_lengths();
  return s;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw ContractError("replay index out of range");
  return data_[i];
}

void ReplayBuffer::push_raw(Transition t) {
  if (capacity_ == 0) return;
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (batch > data_.size()) throw ContractError("sample larger than buffer");
  // partial Fisher-Yates over an index array
  std::vector<std::size_t> idx(data_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t j = i + rng.uniform_below(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(&data_[idx[i]]);
  }
  return out;
}

void push(ReplayBuffer& buffer, Transition t) {
  if (!t.before) throw ContractError("transition without a before-snapshot");
  t.wsp = topo::weighted_shortest_path(*t.before->topology, t.agent, t.action, t.dst,
                                       t.before->queue_len);
  buffer.push_raw(std::move(t));
}

namespace {

struct StackedPass {
  std::vector<agent::SnapshotView> views;
  std::map<const Snapshot*, std::size_t> snap_index;
  agent::FeatureRows rows;
};

std::size_t snap_slot(StackedPass& sp, const Snapshot* s) {
  auto it = sp.snap_index.find(s);
  if (it != sp.snap_index.end()) return it->second;
  const std::size_t slot = sp.views.size();
  sp.snap_index.emplace(s, slot);
  sp.views.push_back(agent::SnapshotView{&s->obs, s->topology.get()});
  return slot;
}

}  // namespace

std::vector<double> target_values(const agent::Model& target,
                                  std::span<const Transition* const> batch, double gamma) {
  std::vector<double> y(batch.size());
  StackedPass sp;
  struct Hook {
    std::size_t tr_index;
    std::size_t first_pair, n_pairs;
  };
  std::vector<Hook> hooks;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  // Collect bootstrap pairs (j, a') over the after-snapshot for non-terminal rows.
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    y[i] = t.reward;
    if (t.done) continue;
    if (!t.after) throw ContractError("non-terminal transition lacks an after-snapshot");
    const topo::Topology& tp = *t.after->topology;
    if (!tp.has_router(t.action)) continue;  // next router failed: bootstrap dropped
    const auto& nbrs = tp.neighbors(t.action);
    if (nbrs.empty()) continue;  // isolated after failure: treated as terminal
    pending.push_back(i);
  }
  if (pending.empty()) return y;

  for (std::size_t i : pending) {
    const Transition& t = *batch[i];
    const std::size_t slot = snap_slot(sp, t.after.get());
    (void)slot;
  }
  nn::Graph g(nn::Mode::eval, /*record=*/false);
  sp.rows = target.features(g, std::span<const agent::SnapshotView>(sp.views));

  for (std::size_t i : pending) {
    const Transition& t = *batch[i];
    const std::size_t slot = sp.snap_index.at(t.after.get());
    const auto& nbrs = t.after->topology->neighbors(t.action);
    Hook h;
    h.tr_index = i;
    h.first_pair = pairs.size();
    h.n_pairs = nbrs.size();
    for (RouterId a : nbrs)
      pairs.emplace_back(sp.rows.row_of.at({slot, t.action}), sp.rows.row_of.at({slot, a}));
    hooks.push_back(h);
  }
  const nn::Tensor& q = g.value(target.score_pairs(g, sp.rows, pairs));
  for (const Hook& h : hooks) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < h.n_pairs; ++p) best = std::max(best, q.at(h.first_pair + p, 0));
    y[h.tr_index] = batch[h.tr_index]->reward + gamma * best;
  }
  return y;
}

nn::ValueId predicted_q(nn::Graph& g, agent::Model& m, std::span<const Transition* const> batch) {
  if (batch.empty()) throw ContractError("predicted_q over an empty batch");
  StackedPass sp;
  for (const Transition* t : batch) {
    if (!t->before) throw ContractError("transition without a before-snapshot");
    snap_slot(sp, t->before.get());
  }
  sp.rows = g.recording() ? m.features_trainable(g, std::span<const agent::SnapshotView>(sp.views))
                          : m.features(g, std::span<const agent::SnapshotView>(sp.views));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(batch.size());
  for (const Transition* t : batch) {
    const std::size_t slot = sp.snap_index.at(t->before.get());
    pairs.emplace_back(sp.rows.row_of.at({slot, t->agent}), sp.rows.row_of.at({slot, t->action}));
  }
  return g.recording() ? m.score_pairs_trainable(g, sp.rows, pairs)
                       : m.score_pairs(g, sp.rows, pairs);
}

double td_loss(agent::Model& m, std::span<const Transition* const> batch,
               std::span<const double> targets, Rng& dropout_rng) {
  if (batch.size() != targets.size()) throw ContractError("td_loss: batch/target size mismatch");
  nn::Graph g(nn::Mode::train, /*record=*/true, &dropout_rng);
  nn::ValueId q = predicted_q(g, m, batch);
  nn::Tensor y(batch.size(), 1);
  for (std::size_t i = 0; i < targets.size(); ++i) y.at(i, 0) = targets[i];
  nn::ValueId loss = g.mean_all(g.square(g.sub(q, g.input(std::move(y)))));
  return g.value(loss).at(0, 0);
}

double ec_loss(agent::Model& m, std::span<const Transition* const> batch, Rng& dropout_rng) {
  nn::Graph g(nn::Mode::train, /*record=*/true, &dropout_rng);
  nn::ValueId q = predicted_q(g, m, batch);
  nn::Tensor wsp(batch.size(), 1), mask(batch.size(), 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->wsp) {
      wsp.at(i, 0) = *batch[i]->wsp;
      mask.at(i, 0) = 1.0;
    }
  }
  // target is -wsp, so the residual is q + wsp
  nn::ValueId resid = g.square(g.add(q, g.input(std::move(wsp))));
  nn::ValueId loss = g.scale(g.sum_all(g.mul(resid, g.input(std::move(mask)))),
                             1.0 / static_cast<double>(batch.size()));
  return g.value(loss).at(0, 0);
}

double epsilon_at(const TrainConfig& cfg, long env_step) {
  const double total = static_cast<double>(cfg.episodes) * cfg.steps_per_episode;
  const double anneal = std::max(1.0, total * cfg.eps_fraction);
  const double frac = std::min(1.0, static_cast<double>(env_step) / anneal);
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

void soft_update(nn::ParamStore& target, const nn::ParamStore& online, double beta) {
  target.soft_update_from(online, beta);
}

std::optional<LossValues> train_step(agent::Model& online, agent::Model& target,
                                     ReplayBuffer& buffer, const TrainConfig& cfg, Rng& sample_rng,
                                     Rng& dropout_rng) {
  if (buffer.size() < static_cast<std::size_t>(cfg.warmup) ||
      buffer.size() < static_cast<std::size_t>(cfg.batch))
    return std::nullopt;
  auto batch = buffer.sample(static_cast<std::size_t>(cfg.batch), sample_rng);
  auto span = std::span<const Transition* const>(batch);
  std::vector<double> y = target_values(target, span, cfg.gamma);

  nn::Graph g(nn::Mode::train, /*record=*/true, &dropout_rng);
  nn::ValueId q = predicted_q(g, online, span);
  nn::Tensor yt(batch.size(), 1), wsp(batch.size(), 1), mask(batch.size(), 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    yt.at(i, 0) = y[i];
    if (batch[i]->wsp) {
      wsp.at(i, 0) = *batch[i]->wsp;
      mask.at(i, 0) = 1.0;
    }
  }
  nn::ValueId td = g.mean_all(g.square(g.sub(q, g.input(std::move(yt)))));
  nn::ValueId ec = g.scale(
      g.sum_all(g.mul(g.square(g.add(q, g.input(std::move(wsp)))), g.input(std::move(mask)))),
      1.0 / static_cast<double>(batch.size()));
  nn::ValueId total = g.add(td, g.scale(ec, cfg.ec_weight));

  LossValues lv{g.value(td).at(0, 0), g.value(ec).at(0, 0)};
  online.params().zero_grads();
  g.backward(total);
  online.params().adam_step(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  soft_update(target.params(), online.params(), cfg.beta);
  return lv;
}

TrainResult train_run(const TrainConfig& cfg, const agent::AgentConfig& agent_cfg,
                      const topo::LoadedTopology& world, const sim::SimConfig& sim_cfg,
                      std::uint64_t seed) {
  TrainResult result;
  const int obs_dim = sim_cfg.obs.dim();
  result.model = std::make_unique<agent::Model>(agent_cfg, obs_dim, Rng(seed).fork("init").state());
  agent::Model target(agent_cfg, obs_dim, 0);
  target.params().copy_values_from(result.model->params());

  ReplayBuffer buffer(cfg.replay_capacity);
  Rng explore_rng = Rng(seed).fork("explore");
  Rng sample_rng = Rng(seed).fork("replay");
  Rng dropout_rng = Rng(seed).fork("dropout");

  topo::TrafficSpec traffic = world.traffic;
  if (cfg.lambda_override) traffic.lambda = *cfg.lambda_override;
  auto base_topology = std::make_shared<topo::Topology>(world.topology);

  long env_steps = 0;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const std::uint64_t ep_seed = Rng(seed).fork("episode." + std::to_string(ep)).state();
    sim::SimState st = sim::reset(base_topology, traffic, world.events, sim_cfg, ep_seed);
    std::map<int, std::shared_ptr<const Snapshot>> snaps;
    snaps[st.current_step()] = make_snapshot(st);

    double td_sum = 0.0, ec_sum = 0.0;
    long loss_n = 0;
    double last_eps = epsilon_at(cfg, env_steps);
    for (int s = 0; s < cfg.steps_per_episode; ++s) {
      const double eps = epsilon_at(cfg, env_steps);
      last_eps = eps;
      auto snap_before = snaps.at(st.current_step());
      auto actions =
          agent::act_from_obs(*result.model, *snap_before->topology, snap_before->obs,
                              st.routers_with_packets(), eps, explore_rng, nullptr,
                              st.current_step());
      sim::StepOutcome out = st.step(actions);
      auto snap_after = make_snapshot(st);
      snaps[st.current_step()] = snap_after;

      for (const sim::AgentOutcome& ao : out.transitions) {
        auto bit = snaps.find(ao.decided_at);
        if (bit == snaps.end()) continue;
        Transition t;
        t.before = bit->second;
        t.after = snap_after;
        t.agent = ao.agent;
        t.action = ao.action;
        t.dst = ao.packet_dst;
        t.reward = ao.reward;
        t.done = ao.done;
        push(buffer, std::move(t));
      }
      // keep only snapshots young enough to matter for in-flight packets
      while (snaps.size() > 66) snaps.erase(snaps.begin());

      ++env_steps;
      if (env_steps % cfg.train_interval == 0) {
        if (auto lv = train_step(*result.model, target, buffer, cfg, sample_rng, dropout_rng)) {
          td_sum += lv->td;
          ec_sum += lv->ec;
          ++loss_n;
        }
      }
    }
    sim::Metrics m = st.metrics(0, cfg.steps_per_episode);
    EpisodeRecord rec;
    rec.episode = ep;
    rec.env_steps = env_steps;
    rec.epsilon = last_eps;
    rec.delivery_rate = m.delivery_rate;
    rec.avg_latency_ms = m.avg_latency_ms;
    rec.td_loss = loss_n ? td_sum / loss_n : 0.0;
    rec.ec_loss = loss_n ? ec_sum / loss_n : 0.0;
    result.curve.push_back(rec);
  }
  result.optimizer_steps = static_cast<long>(result.model->params().adam_steps());
  return result;
}

}  // namespace drama::train
