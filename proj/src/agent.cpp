#include "drama/agent.hpp"

#include <algorithm>

#include "json.hpp"

namespace drama::agent {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::qsl_only: return "qsl_only";
    case Ablation::oel_qsl: return "oel_qsl";
    case Ablation::ecl_qsl: return "ecl_qsl";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "qsl_only") return Ablation::qsl_only;
  if (s == "oel_qsl") return Ablation::oel_qsl;
  if (s == "ecl_qsl") return Ablation::ecl_qsl;
  throw ContractError("unknown ablation mode '" + s + "'");
}

namespace {
std::string round_name(int c) { return "ecl.r" + std::to_string(c); }
}  // namespace

Model::Model(AgentConfig cfg, int obs_dim, std::uint64_t init_seed)
    : cfg_(cfg), obs_dim_(obs_dim) {
  if (cfg_.hidden_dim < 1 || cfg_.message_dim < 1) throw ContractError("dims must be positive");
  if (cfg_.comm_rounds < 0) throw ContractError("comm_rounds must be >= 0");
  if (cfg_.message_interval < 1) throw ContractError("message_interval must be >= 1");
  if (cfg_.quantize_bits != 0 && cfg_.quantize_bits != 1)
    throw ContractError("quantize_bits must be 0 or 1");

  if (cfg_.uses_oel())
    nn::init_mlp2(params_, "f1", obs_dim_, cfg_.hidden_dim, cfg_.message_dim, init_seed);
  if (cfg_.uses_ecl()) {
    for (int c = 1; c <= cfg_.comm_rounds; ++c) {
      const int in = (c == 1) ? cfg_.h0_dim(obs_dim_) : cfg_.message_dim;
      nn::init_attention(params_, round_name(c) + ".attn", in, cfg_.message_dim, init_seed);
      nn::init_mlp2(params_, round_name(c) + ".f2", cfg_.message_dim, cfg_.hidden_dim,
                    cfg_.message_dim, init_seed);
    }
  }
  nn::init_mlp2(params_, "f3", 2 * cfg_.feature_dim(obs_dim_), cfg_.hidden_dim, 1, init_seed);
}

/// Routes layer calls to the trainable or frozen path so one forward
/// implementation serves rollouts and training alike.
struct Model::Access {
  nn::ParamStore* rw = nullptr;
  const nn::ParamStore* ro = nullptr;

  nn::ValueId mlp(nn::Graph& g, const std::string& name, nn::ValueId x, bool sig) const {
    return rw ? nn::mlp2(g, *rw, name, x, sig) : nn::mlp2_frozen(g, *ro, name, x, sig);
  }
  nn::ValueId proj(nn::Graph& g, const std::string& name, nn::ValueId x) const {
    return g.matmul(x, rw ? g.param(*rw, name) : g.param_const(*ro, name));
  }
};

std::vector<nn::ValueId> Model::comm_chain(
    nn::Graph& g, const Access& a, nn::ValueId h0,
    const std::vector<std::vector<std::size_t>>& groups,
    const std::function<nn::ValueId(nn::Graph&, int, nn::ValueId)>& message_source) const {
  std::vector<nn::ValueId> chain{h0};
  const double p = g.mode() == nn::Mode::train ? cfg_.dropout : 0.0;
  nn::ValueId h = h0;
  for (int c = 1; c <= cfg_.comm_rounds; ++c) {
    nn::ValueId msg = message_source ? message_source(g, c, h) : h;
    if (cfg_.quantize_bits == 1) msg = g.binarize(msg, 0.5);
    const std::string an = round_name(c) + ".attn";
    nn::ValueId q = a.proj(g, an + ".wq", h);
    nn::ValueId k = a.proj(g, an + ".wk", msg);
    nn::ValueId v = a.proj(g, an + ".wv", msg);
    nn::ValueId agg = g.grouped_attention(q, k, v, groups, cfg_.tau, p);
    h = a.mlp(g, round_name(c) + ".f2", agg, /*sigmoid*/ true);
    chain.push_back(h);
  }
  return chain;
}

FeatureRows Model::build_features(nn::Graph& g, const Access& a,
                                  std::span<const SnapshotView> snaps, const MessageState* cache,
                                  int step) const {
  FeatureRows fr;
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    if (!snaps[s].obs || !snaps[s].topology) throw ContractError("empty snapshot view");
    for (RouterId r : snaps[s].topology->routers()) {
      if (!snaps[s].obs->count(r))
        throw ContractError("missing observation for active router " + std::to_string(r));
      fr.row_of[{s, r}] = fr.index.size();
      fr.index.emplace_back(s, r);
    }
  }
  const std::size_t M = fr.index.size();
  if (M == 0) throw ContractError("feature pass over zero routers");

  nn::Tensor X(M, static_cast<std::size_t>(obs_dim_));
  for (std::size_t row = 0; row < M; ++row) {
    const auto& [s, r] = fr.index[row];
    auto flat = snaps[s].obs->at(r).flat();
    if (static_cast<int>(flat.size()) != obs_dim_)
      throw ContractError("observation dimension " + std::to_string(flat.size()) +
                          " does not match model " + std::to_string(obs_dim_));
    std::copy(flat.begin(), flat.end(), X.data() + row * obs_dim_);
  }
  nn::ValueId x = g.input(std::move(X));

  if (cfg_.ablation == Ablation::qsl_only) {
    fr.features = x;
    return fr;
  }

  nn::ValueId h0 = cfg_.uses_oel() ? a.mlp(g, "f1", x, /*sigmoid*/ true) : x;

  if (cfg_.uses_ecl()) {
    std::vector<std::vector<std::size_t>> groups(M);
    for (std::size_t row = 0; row < M; ++row) {
      const auto& [s, r] = fr.index[row];
      for (RouterId nb : snaps[s].topology->neighbors(r)) groups[row].push_back(fr.row_of.at({s, nb}));
    }
    const bool stale = cache != nullptr && cfg_.message_interval > 1 &&
                       (step % cfg_.message_interval) != 0 && !g.recording();
    std::function<nn::ValueId(nn::Graph&, int, nn::ValueId)> source;
    if (stale) {
      // Receivers see the sender's last broadcast; a router that has never
      // broadcast (just joined) contributes its fresh message.
      source = [&fr, cache, M](nn::Graph& gg, int c, nn::ValueId fresh) {
        nn::Tensor S = gg.value(fresh);
        for (std::size_t row = 0; row < M; ++row) {
          const RouterId r = fr.index[row].second;
          auto it = cache->rounds.find(r);
          if (it == cache->rounds.end()) continue;
          if (static_cast<int>(it->second.size()) < c) continue;
          const auto& vals = it->second[c - 1];
          if (vals.size() != S.cols()) continue;
          for (std::size_t j = 0; j < S.cols(); ++j) S.at(row, j) = vals[j];
        }
        return gg.input(std::move(S));
      };
    }
    fr.h_chain = comm_chain(g, a, h0, groups, source);
  } else {
    fr.h_chain.push_back(h0);
  }

  if (cfg_.ablation == Ablation::ecl_qsl) {
    std::vector<nn::ValueId> parts{x};
    parts.insert(parts.end(), fr.h_chain.begin() + 1, fr.h_chain.end());
    fr.features = parts.size() == 1 ? x : g.concat_cols(parts);
  } else {
    fr.features = fr.h_chain.size() == 1 ? fr.h_chain[0] : g.concat_cols(fr.h_chain);
  }
  return fr;
}

FeatureRows Model::features(nn::Graph& g, std::span<const SnapshotView> snaps,
                            const MessageState* cache, int step) const {
  if (g.recording()) throw ContractError("const feature pass on a recording graph");
  Access a;
  a.ro = &params_;
  return build_features(g, a, snaps, cache, step);
}

FeatureRows Model::features_trainable(nn::Graph& g, std::span<const SnapshotView> snaps) {
  Access a;
  a.rw = &params_;
  return build_features(g, a, snaps, nullptr, 0);
}

nn::ValueId Model::build_scores(nn::Graph& g, const Access& a, const FeatureRows& fr,
                                const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
  if (pairs.empty()) throw ContractError("score_pairs with no pairs");
  std::vector<std::size_t> lefts, rights;
  lefts.reserve(pairs.size());
  rights.reserve(pairs.size());
  for (const auto& [l, r] : pairs) {
    lefts.push_back(l);
    rights.push_back(r);
  }
  nn::ValueId x = g.concat_cols({g.gather_rows(fr.features, std::move(lefts)),
                                 g.gather_rows(fr.features, std::move(rights))});
  return a.mlp(g, "f3", x, /*sigmoid*/ false);
}

nn::ValueId Model::score_pairs(nn::Graph& g, const FeatureRows& fr,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
  Access a;
  a.ro = &params_;
  return build_scores(g, a, fr, pairs);
}

nn::ValueId Model::score_pairs_trainable(nn::Graph& g, const FeatureRows& fr,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  Access a;
  a.rw = &params_;
  return build_scores(g, a, fr, pairs);
}

std::vector<nn::ValueId> Model::message_chain(
    nn::Graph& g, nn::ValueId h0, const std::vector<std::vector<std::size_t>>& groups) const {
  if (g.recording()) throw ContractError("message_chain evaluates frozen parameters");
  Access a;
  a.ro = &params_;
  return comm_chain(g, a, h0, groups, {});
}

void Model::update_message_cache(const nn::Graph& g, const FeatureRows& fr,
                                 MessageState& msgs) const {
  if (!cfg_.uses_ecl()) return;
  // Messages actually transmitted are h^(0)..h^(C-1).
  const int broadcast_rounds = cfg_.comm_rounds;
  msgs.rounds.clear();
  for (std::size_t row = 0; row < fr.index.size(); ++row) {
    auto& slot = msgs.rounds[fr.index[row].second];
    slot.resize(broadcast_rounds);
    for (int c = 0; c < broadcast_rounds; ++c)
      slot[c] = g.value(fr.h_chain[c]).row_values(row);
  }
}

std::vector<double> encode_observation(const Model& m, const sim::Observation& o) {
  if (!m.config().uses_oel())
    throw ContractError("observation encoder is disabled in this ablation mode");
  auto flat = o.flat();
  if (static_cast<int>(flat.size()) != m.obs_dim())
    throw ContractError("observation dimension mismatch");
  nn::Graph g(nn::Mode::eval, /*record=*/false);
  nn::ValueId y = nn::mlp2_frozen(g, m.params(), "f1", g.input(nn::Tensor::row(flat)), true);
  return g.value(y).row_values(0);
}

std::map<RouterId, std::vector<double>> run_communication(
    const Model& m, const topo::Topology& t, const std::map<RouterId, std::vector<double>>& h0) {
  const auto& cfg = m.config();
  nn::Graph g(nn::Mode::eval, /*record=*/false);
  std::map<RouterId, std::size_t> row_of;
  std::vector<RouterId> order;
  for (RouterId r : t.routers()) {
    if (!h0.count(r)) throw ContractError("missing h0 for active router " + std::to_string(r));
    row_of[r] = order.size();
    order.push_back(r);
  }
  const std::size_t dim = h0.begin()->second.size();
  nn::Tensor H(order.size(), dim);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& v = h0.at(order[i]);
    if (v.size() != dim) throw ContractError("inconsistent h0 dimensions");
    std::copy(v.begin(), v.end(), H.data() + i * dim);
  }
  nn::ValueId h = g.input(std::move(H));
  std::vector<nn::ValueId> chain{h};
  if (cfg.uses_ecl()) {
    std::vector<std::vector<std::size_t>> groups(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      for (RouterId nb : t.neighbors(order[i])) groups[i].push_back(row_of.at(nb));
    chain = m.message_chain(g, h, groups);
  }
  nn::ValueId f = chain.size() == 1 ? chain[0] : g.concat_cols(chain);
  std::map<RouterId, std::vector<double>> out;
  for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = g.value(f).row_values(i);
  return out;
}

std::map<RouterId, double> score_neighbors(const Model& m, const std::vector<double>& f_i,
                                           const std::map<RouterId, std::vector<double>>& f_nbrs) {
  if (f_nbrs.empty()) throw ContractError("score_neighbors with an empty neighbor set");
  std::map<RouterId, double> out;
  nn::Graph g(nn::Mode::eval, /*record=*/false);
  for (const auto& [j, fj] : f_nbrs) {
    std::vector<double> cat = f_i;
    cat.insert(cat.end(), fj.begin(), fj.end());
    nn::ValueId q = nn::mlp2_frozen(g, m.params(), "f3", g.input(nn::Tensor::row(cat)), false);
    out[j] = g.value(q).at(0, 0);
  }
  return out;
}

RouterId select_action(const std::map<RouterId, double>& q_scores, double epsilon, Rng& rng) {
  if (q_scores.empty()) throw ContractError("select_action with no scores");
  if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("epsilon must be in [0,1]");
  if (epsilon > 0.0 && rng.uniform01() < epsilon) {
    auto it = q_scores.begin();
    std::advance(it, static_cast<long>(rng.uniform_below(q_scores.size())));
    return it->first;
  }
  RouterId best = q_scores.begin()->first;
  double best_q = q_scores.begin()->second;
  for (const auto& [j, q] : q_scores)
    if (q > best_q) {
      best = j;
      best_q = q;
    }
  return best;
}

std::map<RouterId, RouterId> act_from_obs(const Model& m, const topo::Topology& t,
                                          const std::map<RouterId, sim::Observation>& obs,
                                          const std::vector<RouterId>& acting, double epsilon,
                                          Rng& rng, MessageState* msgs, int step) {
  SnapshotView view{&obs, &t};
  nn::Graph g(nn::Mode::eval, /*record=*/false);
  FeatureRows fr = m.features(g, std::span<const SnapshotView>(&view, 1), msgs, step);
  if (msgs && m.config().uses_ecl() && (step % m.config().message_interval) == 0)
    m.update_message_cache(g, fr, *msgs);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::pair<RouterId, RouterId>> pair_ids;
  for (RouterId i : acting) {
    for (RouterId j : t.neighbors(i)) {
      pairs.emplace_back(fr.row_of.at({0, i}), fr.row_of.at({0, j}));
      pair_ids.emplace_back(i, j);
    }
  }
  std::map<RouterId, RouterId> actions;
  if (pairs.empty()) return actions;
  const nn::Tensor& q = g.value(m.score_pairs(g, fr, pairs));

  std::map<RouterId, std::map<RouterId, double>> per_router;
  for (std::size_t p = 0; p < pair_ids.size(); ++p)
    per_router[pair_ids[p].first][pair_ids[p].second] = q.at(p, 0);
  for (const auto& [i, scores] : per_router) actions[i] = select_action(scores, epsilon, rng);
  return actions;
}

std::map<RouterId, RouterId> act_all(const Model& m, const sim::SimState& st, double epsilon,
                                     Rng& rng, MessageState* msgs) {
  return act_from_obs(m, st.topology(), st.observe_all(), st.routers_with_packets(), epsilon, rng,
                      msgs, st.current_step());
}

Model Model::with_message_flags(int quantize_bits, int message_interval) const {
  AgentConfig cfg = cfg_;
  cfg.quantize_bits = quantize_bits;
  cfg.message_interval = message_interval;
  Model m(cfg, obs_dim_, 0);
  m.params_.copy_values_from(params_);
  return m;
}

std::string Model::save_checkpoint_json() const {
  nlohmann::json j;
  j["format"] = "drama-checkpoint";
  j["version"] = 1;
  j["config"] = {{"hidden_dim", cfg_.hidden_dim},
                 {"message_dim", cfg_.message_dim},
                 {"comm_rounds", cfg_.comm_rounds},
                 {"tau", cfg_.tau},
                 {"dropout", cfg_.dropout},
                 {"ablation", to_string(cfg_.ablation)},
                 {"quantize_bits", cfg_.quantize_bits},
                 {"message_interval", cfg_.message_interval},
                 {"obs_dim", obs_dim_}};
  j["store"] = nlohmann::json::parse(params_.to_json());
  return j.dump();
}

Model Model::load_checkpoint_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("format") || j["format"] != "drama-checkpoint" || j.value("version", 0) != 1)
    throw ParseError("not a version-1 drama checkpoint");
  const auto& c = j.at("config");
  AgentConfig cfg;
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.message_dim = c.at("message_dim").get<int>();
  cfg.comm_rounds = c.at("comm_rounds").get<int>();
  cfg.tau = c.at("tau").get<double>();
  cfg.dropout = c.at("dropout").get<double>();
  cfg.ablation = ablation_from_string(c.at("ablation").get<std::string>());
  cfg.quantize_bits = c.at("quantize_bits").get<int>();
  cfg.message_interval = c.at("message_interval").get<int>();
  const int obs_dim = c.at("obs_dim").get<int>();

  Model m(cfg, obs_dim, /*init_seed=*/0);
  nn::ParamStore loaded = nn::ParamStore::from_json(j.at("store").dump());
  // Shape congruence against the configured architecture, by name.
  for (const auto& name : m.params_.param_names()) {
    if (!loaded.has_param(name))
      throw ContractError("checkpoint is missing parameter '" + name + "'");
    const auto& want = m.params_.value(name);
    const auto& got = loaded.value(name);
    if (!want.same_shape(got))
      throw ContractError("checkpoint shape mismatch for '" + name + "': expected " +
                          std::to_string(want.rows()) + "x" + std::to_string(want.cols()) +
                          ", found " + std::to_string(got.rows()) + "x" +
                          std::to_string(got.cols()));
  }
  if (loaded.param_names() != m.params_.param_names())
    throw ContractError("checkpoint parameter set does not match the configured architecture");
  m.params_.copy_values_from(loaded);
  return m;
}

}  // namespace drama::agent
