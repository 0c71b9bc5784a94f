#include "drama/topo.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>

namespace drama::topo {

Link Link::make(RouterId u, RouterId v, int length, int bandwidth) {
  if (u == v) throw ValidationError("link endpoints must differ (self-loop at " + std::to_string(u) + ")");
  if (length < 1) throw ValidationError("link length must be >= 1");
  if (bandwidth < 1) throw ValidationError("link bandwidth must be >= 1");
  Link l;
  l.a = std::min(u, v);
  l.b = std::max(u, v);
  l.length = length;
  l.bandwidth = bandwidth;
  return l;
}

Topology::Topology(std::vector<RouterId> routers, std::vector<Link> links) {
  std::sort(routers.begin(), routers.end());
  if (std::adjacent_find(routers.begin(), routers.end()) != routers.end())
    throw ValidationError("duplicate router id");
  routers_ = std::move(routers);
  for (const Link& l : links) {
    if (!has_router(l.a) || !has_router(l.b))
      throw ValidationError("link (" + std::to_string(l.a) + "," + std::to_string(l.b) +
                            ") references unknown router");
    auto key = std::make_pair(l.a, l.b);
    if (links_.count(key))
      throw ValidationError("duplicate link (" + std::to_string(l.a) + "," + std::to_string(l.b) + ")");
    links_.emplace(key, l);
  }
  rebuild_adjacency();
}

void Topology::rebuild_adjacency() {
  adj_.clear();
  for (RouterId r : routers_) adj_[r];
  for (const auto& [key, l] : links_) {
    adj_[l.a].push_back(l.b);
    adj_[l.b].push_back(l.a);
  }
  for (auto& [r, nbrs] : adj_) std::sort(nbrs.begin(), nbrs.end());
}

bool Topology::has_router(RouterId id) const {
  return std::binary_search(routers_.begin(), routers_.end(), id);
}

bool Topology::has_link(RouterId u, RouterId v) const {
  return links_.count({std::min(u, v), std::max(u, v)}) != 0;
}

std::optional<Link> Topology::link(RouterId u, RouterId v) const {
  auto it = links_.find({std::min(u, v), std::max(u, v)});
  if (it == links_.end()) return std::nullopt;
  return it->second;
}

const std::vector<RouterId>& Topology::neighbors(RouterId i) const {
  auto it = adj_.find(i);
  if (it == adj_.end()) throw ContractError("unknown router id " + std::to_string(i));
  return it->second;
}

Topology apply_event(const Topology& t, const TopologyEvent& ev) {
  Topology out = t;
  out.version_ = t.version_ + 1;
  if (const auto* lf = std::get_if<LinkFailure>(&ev.kind)) {
    auto key = std::make_pair(std::min(lf->a, lf->b), std::max(lf->a, lf->b));
    if (!out.links_.erase(key))
      throw ValidationError("cannot fail nonexistent link (" + std::to_string(lf->a) + "," +
                            std::to_string(lf->b) + ")");
  } else if (const auto* rf = std::get_if<RouterFailure>(&ev.kind)) {
    auto it = std::lower_bound(out.routers_.begin(), out.routers_.end(), rf->id);
    if (it == out.routers_.end() || *it != rf->id)
      throw ValidationError("cannot fail nonexistent router " + std::to_string(rf->id));
    out.routers_.erase(it);
    for (auto lit = out.links_.begin(); lit != out.links_.end();) {
      if (lit->second.a == rf->id || lit->second.b == rf->id)
        lit = out.links_.erase(lit);
      else
        ++lit;
    }
  } else {
    const auto& add = std::get<RouterAddition>(ev.kind);
    if (out.has_router(add.id))
      throw ValidationError("cannot add duplicate router " + std::to_string(add.id));
    out.routers_.insert(std::lower_bound(out.routers_.begin(), out.routers_.end(), add.id), add.id);
    for (const Link& l : add.links) {
      if (l.a != add.id && l.b != add.id)
        throw ValidationError("addition link must touch the new router " + std::to_string(add.id));
      if (!out.has_router(l.a) || !out.has_router(l.b))
        throw ValidationError("addition link references unknown router");
      auto key = std::make_pair(l.a, l.b);
      if (out.links_.count(key)) throw ValidationError("addition duplicates an existing link");
      out.links_.emplace(key, l);
    }
  }
  out.rebuild_adjacency();
  return out;
}

std::map<RouterId, double> wsp_cost_to(const Topology& t, RouterId z,
                                       const std::map<RouterId, int>& queue_lengths) {
  if (!t.has_router(z)) throw ContractError("unknown destination router " + std::to_string(z));
  auto queue_of = [&](RouterId r) -> double {
    if (r == z) return 0.0;  // delivery is immediate at the destination
    auto it = queue_lengths.find(r);
    return it == queue_lengths.end() ? 0.0 : static_cast<double>(it->second);
  };
  // Label-setting search from z over reversed hop costs: entering v costs
  // length(u,v) + queue(v), so the reverse relaxation from v to u charges
  // length(u,v) + queue(v) with v's queue already settled.
  std::map<RouterId, double> dist;
  using Item = std::pair<double, RouterId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[z] = 0.0;
  pq.emplace(0.0, z);
  while (!pq.empty()) {
    auto [d, v] = pq.top();
    pq.pop();
    if (d > dist[v]) continue;
    for (RouterId u : t.neighbors(v)) {
      double cand = d + t.link(u, v)->length + queue_of(v);
      auto it = dist.find(u);
      if (it == dist.end() || cand < it->second) {
        dist[u] = cand;
        pq.emplace(cand, u);
      }
    }
  }
  return dist;
}

std::optional<double> weighted_shortest_path(const Topology& t, RouterId i, RouterId j, RouterId z,
                                             const std::map<RouterId, int>& queue_lengths) {
  const auto& nbrs = t.neighbors(i);
  if (!std::binary_search(nbrs.begin(), nbrs.end(), j))
    throw ContractError("weighted_shortest_path: " + std::to_string(j) + " is not a neighbor of " +
                        std::to_string(i));
  auto dist = wsp_cost_to(t, z, queue_lengths);
  auto it = dist.find(j);
  if (it == dist.end()) return std::nullopt;
  double qj = (j == z) ? 0.0 : [&] {
    auto q = queue_lengths.find(j);
    return q == queue_lengths.end() ? 0.0 : static_cast<double>(q->second);
  }();
  return t.link(i, j)->length + qj + it->second;
}

namespace {

struct Line {
  int number;
  std::string text;
};

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw ParseError("line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> tokens(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

long parse_int(const std::string& tok, int line) {
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos != tok.size()) parse_fail(line, "not an integer: '" + tok + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (...) {
    parse_fail(line, "not an integer: '" + tok + "'");
  }
}

double parse_real(const std::string& tok, int line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) parse_fail(line, "not a number: '" + tok + "'");
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (...) {
    parse_fail(line, "not a number: '" + tok + "'");
  }
}

// "0..9" expands to the inclusive range; otherwise a single id.
void parse_ids_into(const std::string& tok, int line, std::vector<RouterId>& out) {
  auto dots = tok.find("..");
  if (dots != std::string::npos) {
    long lo = parse_int(tok.substr(0, dots), line);
    long hi = parse_int(tok.substr(dots + 2), line);
    if (lo > hi) parse_fail(line, "empty id range '" + tok + "'");
    for (long v = lo; v <= hi; ++v) out.push_back(static_cast<RouterId>(v));
  } else {
    out.push_back(static_cast<RouterId>(parse_int(tok, line)));
  }
}

}  // namespace

LoadedTopology load_topology(const std::string& text) {
  std::vector<RouterId> routers;
  std::vector<Link> links;
  TrafficSpec traffic;
  bool have_lambda = false;
  std::vector<TopologyEvent> events;

  std::string section;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    auto toks = tokens(raw);
    if (toks.empty()) continue;

    if (toks[0].front() == '[') {
      if (toks.size() != 1 || toks[0].back() != ']') parse_fail(lineno, "malformed section header");
      section = toks[0].substr(1, toks[0].size() - 2);
      if (section != "routers" && section != "links" && section != "traffic" && section != "events")
        parse_fail(lineno, "unknown section [" + section + "]");
      continue;
    }
    if (section.empty()) parse_fail(lineno, "content before any section header");

    if (section == "routers") {
      if (toks.size() >= 3 && toks[1] == "=") {
        if (toks[0] == "count") {
          long n = parse_int(toks[2], lineno);
          if (n < 1) parse_fail(lineno, "router count must be positive");
          for (long i = 0; i < n; ++i) routers.push_back(static_cast<RouterId>(i));
        } else if (toks[0] == "ids") {
          for (std::size_t i = 2; i < toks.size(); ++i) parse_ids_into(toks[i], lineno, routers);
        } else {
          parse_fail(lineno, "expected 'count = N' or 'ids = ...'");
        }
      } else {
        for (const auto& t : toks) parse_ids_into(t, lineno, routers);
      }
    } else if (section == "links") {
      if (toks.size() < 2 || toks.size() > 4) parse_fail(lineno, "expected 'u v [length] [bandwidth]'");
      long u = parse_int(toks[0], lineno), v = parse_int(toks[1], lineno);
      long len = toks.size() > 2 ? parse_int(toks[2], lineno) : 1;
      long bw = toks.size() > 3 ? parse_int(toks[3], lineno) : 1;
      try {
        links.push_back(Link::make(static_cast<RouterId>(u), static_cast<RouterId>(v),
                                   static_cast<int>(len), static_cast<int>(bw)));
      } catch (const ValidationError& e) {
        parse_fail(lineno, e.what());
      }
    } else if (section == "traffic") {
      if (toks.size() < 3 || toks[1] != "=") parse_fail(lineno, "expected 'key = value...'");
      if (toks[0] == "sources") {
        for (std::size_t i = 2; i < toks.size(); ++i) parse_ids_into(toks[i], lineno, traffic.sources);
      } else if (toks[0] == "destinations") {
        for (std::size_t i = 2; i < toks.size(); ++i)
          parse_ids_into(toks[i], lineno, traffic.destinations);
      } else if (toks[0] == "lambda") {
        traffic.lambda = parse_real(toks[2], lineno);
        have_lambda = true;
      } else {
        parse_fail(lineno, "unknown traffic key '" + toks[0] + "'");
      }
    } else {  // events
      if (toks.size() < 2) parse_fail(lineno, "expected 'step kind args...'");
      TopologyEvent ev;
      ev.at_step = static_cast<int>(parse_int(toks[0], lineno));
      if (ev.at_step < 0) parse_fail(lineno, "event step must be non-negative");
      const std::string& kind = toks[1];
      if (kind == "fail_link") {
        if (toks.size() != 4) parse_fail(lineno, "fail_link takes: u v");
        ev.kind = LinkFailure{static_cast<RouterId>(parse_int(toks[2], lineno)),
                              static_cast<RouterId>(parse_int(toks[3], lineno))};
      } else if (kind == "fail_router") {
        if (toks.size() != 3) parse_fail(lineno, "fail_router takes: id");
        ev.kind = RouterFailure{static_cast<RouterId>(parse_int(toks[2], lineno))};
      } else if (kind == "add_router") {
        if (toks.size() < 3 || (toks.size() - 3) % 4 != 0)
          parse_fail(lineno, "add_router takes: id (u v length bandwidth)*");
        RouterAddition add;
        add.id = static_cast<RouterId>(parse_int(toks[2], lineno));
        for (std::size_t i = 3; i + 3 < toks.size(); i += 4) {
          try {
            add.links.push_back(Link::make(static_cast<RouterId>(parse_int(toks[i], lineno)),
                                           static_cast<RouterId>(parse_int(toks[i + 1], lineno)),
                                           static_cast<int>(parse_int(toks[i + 2], lineno)),
                                           static_cast<int>(parse_int(toks[i + 3], lineno))));
          } catch (const ValidationError& e) {
            parse_fail(lineno, e.what());
          }
        }
        ev.kind = add;
      } else {
        parse_fail(lineno, "unknown event kind '" + kind + "'");
      }
      events.push_back(std::move(ev));
    }
  }

  if (routers.empty()) throw ValidationError("topology declares no routers");
  Topology topo(routers, links);  // validates links and duplicates

  if (traffic.sources.empty()) throw ValidationError("traffic declares no sources");
  if (traffic.destinations.empty()) throw ValidationError("traffic declares no destinations");
  if (!have_lambda || !(traffic.lambda > 0.0)) throw ValidationError("traffic lambda must be > 0");
  auto check_members = [&](const std::vector<RouterId>& ids, const char* what) {
    for (RouterId r : ids)
      if (!topo.has_router(r))
        throw ValidationError(std::string(what) + " references unknown router " + std::to_string(r));
  };
  check_members(traffic.sources, "traffic sources");
  check_members(traffic.destinations, "traffic destinations");
  std::sort(traffic.sources.begin(), traffic.sources.end());
  traffic.sources.erase(std::unique(traffic.sources.begin(), traffic.sources.end()),
                        traffic.sources.end());
  std::sort(traffic.destinations.begin(), traffic.destinations.end());
  traffic.destinations.erase(std::unique(traffic.destinations.begin(), traffic.destinations.end()),
                             traffic.destinations.end());

  // Events reference load-time elements; later invalidation (e.g. failing a
  // link twice) is reported when the event is applied.
  std::vector<RouterId> future_ids;
  for (const auto& ev : events) {
    if (const auto* lf = std::get_if<LinkFailure>(&ev.kind)) {
      if (!topo.has_link(lf->a, lf->b))
        throw ValidationError("event fail_link references unknown link (" + std::to_string(lf->a) +
                              "," + std::to_string(lf->b) + ")");
    } else if (const auto* rf = std::get_if<RouterFailure>(&ev.kind)) {
      if (!topo.has_router(rf->id))
        throw ValidationError("event fail_router references unknown router " +
                              std::to_string(rf->id));
    } else {
      const auto& add = std::get<RouterAddition>(ev.kind);
      if (topo.has_router(add.id) ||
          std::find(future_ids.begin(), future_ids.end(), add.id) != future_ids.end())
        throw ValidationError("event add_router reuses id " + std::to_string(add.id));
      future_ids.push_back(add.id);
      for (const Link& l : add.links) {
        RouterId other = (l.a == add.id) ? l.b : l.a;
        if (l.a != add.id && l.b != add.id)
          throw ValidationError("add_router link must touch the new router");
        if (!topo.has_router(other) &&
            std::find(future_ids.begin(), future_ids.end(), other) == future_ids.end())
          throw ValidationError("add_router link references unknown router " + std::to_string(other));
      }
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const TopologyEvent& x, const TopologyEvent& y) { return x.at_step < y.at_step; });

  return LoadedTopology{std::move(topo), std::move(traffic), std::move(events)};
}

LoadedTopology load_topology_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open topology file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_topology(ss.str());
}

std::string save_topology(const LoadedTopology& lt) {
  std::ostringstream out;
  out << "[routers]\nids =";
  for (RouterId r : lt.topology.routers()) out << ' ' << r;
  out << "\n\n[links]\n";
  for (const auto& [key, l] : lt.topology.links())
    out << l.a << ' ' << l.b << ' ' << l.length << ' ' << l.bandwidth << '\n';
  out << "\n[traffic]\nsources =";
  for (RouterId r : lt.traffic.sources) out << ' ' << r;
  out << "\ndestinations =";
  for (RouterId r : lt.traffic.destinations) out << ' ' << r;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", lt.traffic.lambda);
  out << "\nlambda = " << buf << '\n';
  if (!lt.events.empty()) {
    out << "\n[events]\n";
    for (const auto& ev : lt.events) {
      out << ev.at_step << ' ';
      if (const auto* lf = std::get_if<LinkFailure>(&ev.kind)) {
        out << "fail_link " << lf->a << ' ' << lf->b;
      } else if (const auto* rf = std::get_if<RouterFailure>(&ev.kind)) {
        out << "fail_router " << rf->id;
      } else {
        const auto& add = std::get<RouterAddition>(ev.kind);
        out << "add_router " << add.id;
        for (const Link& l : add.links)
          out << ' ' << l.a << ' ' << l.b << ' ' << l.length << ' ' << l.bandwidth;
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace drama::topo
