#include "hatkv/checker.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <json.hpp>
#include <numeric>

namespace hatkv {

namespace {

constexpr std::string_view kPhenomenonNames[] = {"G0",  "G1a",  "G1b",  "G1c",  "IMP", "PMP",        "OTV",
                                                 "N-MR", "N-MW", "MRWD", "MYR", "LostUpdate", "WriteSkew"};

std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

bool is_own(const Checker::Txn& t, const VersionId& v) { return v && *v == t.ts; }

std::map<Timestamp, Checker::Txn> parse_txns(const History& h) {
  std::map<Timestamp, Checker::Txn> txns;
  enum State { open = 1, done = 2 };
  std::map<Timestamp, int> state;
  auto fail = [](const HistoryEvent& e, const std::string& why) {
    throw MalformedHistory("event " + std::to_string(e.seq_no) + " (txn " + std::to_string(e.txn.encoded()) +
                           "): " + why);
  };
  for (const auto& e : h) {
    auto& st = state[e.txn];
    auto& t = txns[e.txn];
    switch (e.kind) {
      case EventKind::begin:
        if (st != 0) fail(e, "second begin");
        st = open;
        t.ts = e.txn;
        t.session = e.session;
        break;
      case EventKind::read:
      case EventKind::write:
      case EventKind::pred_read: {
        if (st != open) fail(e, "operation outside an open transaction");
        Checker::Op op;
        op.kind = e.kind;
        if (!e.key) fail(e, "missing key");
        if (e.kind == EventKind::pred_read) {
          try {
            op.pred = parse_predicate_range(*e.key);
          } catch (const std::invalid_argument& ex) {
            fail(e, ex.what());
          }
          op.pred.equals = e.value;
          op.vset = e.vset;
        } else {
          op.key = *e.key;
          op.value = e.value;
          if (e.kind == EventKind::read) {
            if (!e.version) fail(e, "read without observed version");
            op.version = *e.version;
          } else {
            if (!e.value) fail(e, "write without value");
            op.version = t.ts;
            t.final_write[op.key] = t.ops.size();
          }
        }
        t.ops.push_back(std::move(op));
        break;
      }
      case EventKind::commit:
      case EventKind::abort:
        if (st != open) fail(e, "commit or abort outside an open transaction");
        st = done;
        t.committed = e.kind == EventKind::commit;
        break;
    }
  }
  for (const auto& [ts, st] : state) {
    if (st != done) throw MalformedHistory("txn " + std::to_string(ts.encoded()) + " never commits or aborts");
  }
  return txns;
}

VersionOrder version_order_of(const std::map<Timestamp, Checker::Txn>& txns) {
  VersionOrder vo;
  for (const auto& [ts, t] : txns) {
    if (!t.committed) continue;
    for (const auto& [k, idx] : t.final_write) vo.order[k].push_back(ts);
  }
  for (auto& [k, v] : vo.order) std::sort(v.begin(), v.end());
  return vo;
}

// Graph helpers over node indices; adjacency holds (to, edge id) sorted.
using Adj = std::vector<std::vector<std::pair<std::size_t, std::size_t>>>;

// Tarjan, iterative. Returns component id per node.
std::vector<std::size_t> scc(const Adj& adj) {
  const std::size_t n = adj.size();
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, none), low(n, 0), comp(n, none);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::pair<std::size_t, std::size_t>> work;  // (node, next child)
  std::size_t counter = 0, comps = 0;
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != none) continue;
    work.push_back({root, 0});
    while (!work.empty()) {
      auto& [v, child] = work.back();
      if (child == 0 && index[v] == none) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack[v] = true;
      }
      if (child < adj[v].size()) {
        std::size_t w = adj[v][child++].first;
        if (index[w] == none) {
          work.push_back({w, 0});
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      if (low[v] == index[v]) {
        while (true) {
          std::size_t w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = comps;
          if (w == v) break;
        }
        ++comps;
      }
      std::size_t done = v;
      work.pop_back();
      if (!work.empty()) {
        std::size_t parent = work.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }
  return comp;
}

// Shortest path (edge ids) from src to dst inside one component, nodes >= floor.
std::optional<std::vector<std::size_t>> bfs(const Adj& adj, const std::vector<std::size_t>& comp, std::size_t src,
                                            std::size_t dst, std::size_t floor, std::size_t max_len) {
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> prev;  // node -> (parent, edge)
  std::map<std::size_t, std::size_t> depth;
  std::deque<std::size_t> q{src};
  depth[src] = 0;
  bool found = src == dst;
  while (!q.empty() && !found) {
    std::size_t v = q.front();
    q.pop_front();
    if (depth[v] >= max_len) break;
    for (auto [w, e] : adj[v]) {
      if (comp[w] != comp[src] || w < floor || depth.count(w)) continue;
      depth[w] = depth[v] + 1;
      prev[w] = {v, e};
      if (w == dst) {
        found = true;
        break;
      }
      q.push_back(w);
    }
  }
  if (!found) return std::nullopt;
  std::vector<std::size_t> path;
  for (std::size_t v = dst; v != src;) {
    auto [p, e] = prev.at(v);
    path.push_back(e);
    v = p;
  }
  (void)none;
  std::reverse(path.begin(), path.end());
  return path;
}

struct Cycle {
  std::vector<std::size_t> nodes;  // rotated to start at the lowest node
  std::vector<std::size_t> edges;
};

Cycle make_cycle(const std::vector<DsgEdge>& edges, std::vector<std::size_t> eids) {
  std::vector<std::size_t> nodes;
  for (auto e : eids) nodes.push_back(edges[e].from);
  auto lo = std::min_element(nodes.begin(), nodes.end()) - nodes.begin();
  std::rotate(nodes.begin(), nodes.begin() + lo, nodes.end());
  std::rotate(eids.begin(), eids.begin() + lo, eids.end());
  return {nodes, eids};
}

bool better(const Cycle& a, const std::optional<Cycle>& b) {
  if (!b) return true;
  if (a.nodes.size() != b->nodes.size()) return a.nodes.size() < b->nodes.size();
  return a.nodes < b->nodes;
}

// Shortest cycle in each nontrivial component.
std::vector<Cycle> component_cycles(const std::vector<DsgEdge>& edges, const Adj& adj) {
  auto comp = scc(adj);
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t v = 0; v < adj.size(); ++v) members[comp[v]].push_back(v);
  std::vector<Cycle> out;
  for (auto& [c, nodes] : members) {
    if (nodes.size() < 2) continue;
    std::optional<Cycle> best;
    for (std::size_t u : nodes) {
      std::size_t limit = best ? best->nodes.size() - 1 : adj.size();
      for (auto [w, e] : adj[u]) {
        if (comp[w] != c || w < u) continue;
        auto rest = bfs(adj, comp, w, u, u, limit);
        if (!rest) continue;
        std::vector<std::size_t> eids{e};
        eids.insert(eids.end(), rest->begin(), rest->end());
        auto cyc = make_cycle(edges, eids);
        if (better(cyc, best)) {
          best = cyc;
          limit = best->nodes.size() - 1;
        }
      }
    }
    if (best) out.push_back(*best);
  }
  return out;
}

// Shortest cycle through one of the given edges; all in one component.
std::optional<Cycle> cycle_through(const std::vector<DsgEdge>& edges, const Adj& adj,
                                   const std::vector<std::size_t>& comp, const std::vector<std::size_t>& through) {
  std::optional<Cycle> best;
  for (auto e : through) {
    std::size_t limit = best ? best->nodes.size() - 1 : adj.size();
    auto rest = bfs(adj, comp, edges[e].to, edges[e].from, 0, limit);
    if (!rest) continue;
    std::vector<std::size_t> eids{e};
    eids.insert(eids.end(), rest->begin(), rest->end());
    auto cyc = make_cycle(edges, eids);
    if (better(cyc, best)) best = cyc;
  }
  return best;
}

Adj adjacency(std::size_t n, const std::vector<DsgEdge>& edges, const std::function<bool(const DsgEdge&)>& keep) {
  Adj adj(n);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (keep(edges[i])) adj[edges[i].from].push_back({edges[i].to, i});
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

}  // namespace

std::string_view name(Phenomenon p) { return kPhenomenonNames[static_cast<int>(p)]; }

std::optional<Phenomenon> parse_phenomenon(std::string_view s) {
  auto want = squash(s);
  for (auto p : kAllPhenomena) {
    if (squash(name(p)) == want) return p;
  }
  return std::nullopt;
}

std::vector<Phenomenon> parse_phenomena(std::string_view list) {
  if (list == "all") return {kAllPhenomena.begin(), kAllPhenomena.end()};
  std::vector<Phenomenon> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto comma = list.find(',', start);
    auto tok = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    auto p = parse_phenomenon(tok);
    if (!p) throw std::invalid_argument("unknown phenomenon '" + std::string(tok) + "'");
    if (std::find(out.begin(), out.end(), *p) == out.end()) out.push_back(*p);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_finding(const Finding& f) {
  std::string out(name(f.what));
  out += '\t';
  for (std::size_t i = 0; i < f.txns.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(f.txns[i].encoded());
  }
  out += '\t';
  for (std::size_t i = 0; i < f.items.size(); ++i) {
    if (i) out += ',';
    out += f.items[i];
  }
  return out;
}

std::string_view to_string(EdgeType t) {
  switch (t) {
    case EdgeType::ww: return "ww";
    case EdgeType::wr: return "wr";
    case EdgeType::rw: return "rw";
    case EdgeType::pred_wr: return "pred_wr";
    case EdgeType::pred_rw: return "pred_rw";
    case EdgeType::session: return "session";
  }
  return "?";
}

std::optional<std::size_t> Dsg::index_of(Timestamp t) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), t);
  if (it == nodes.end() || *it != t) return std::nullopt;
  return static_cast<std::size_t>(it - nodes.begin());
}

VersionOrder build_version_order(const History& h) { return version_order_of(parse_txns(h)); }

Dsg build_dsg(const History& h, const VersionOrder& vo) {
  Checker c(h);
  (void)vo;
  return c.dsg();
}

Checker::Checker(const History& h) : txns_(parse_txns(h)), vo_(version_order_of(txns_)) {
  for (const auto& [ts, t] : txns_) {
    if (t.committed) dsg_.nodes.push_back(ts);
  }
  auto& edges = dsg_.edges;
  for (const auto& [k, versions] : vo_.order) {
    for (std::size_t i = 1; i < versions.size(); ++i) {
      edges.push_back({*dsg_.index_of(versions[i - 1]), *dsg_.index_of(versions[i]), EdgeType::ww, k});
    }
  }
  for (std::size_t j = 0; j < dsg_.nodes.size(); ++j) {
    const auto& t = txns_.at(dsg_.nodes[j]);
    for (const auto& op : t.ops) {
      if (op.kind == EventKind::read) {
        if (is_own(t, op.version)) continue;
        if (op.version && installed(op.key, *op.version)) {
          edges.push_back({*dsg_.index_of(*op.version), j, EdgeType::wr, op.key});
        }
        auto vit = vo_.order.find(op.key);
        if (vit == vo_.order.end()) continue;
        auto next = op.version ? std::upper_bound(vit->second.begin(), vit->second.end(), *op.version)
                               : vit->second.begin();
        if (next != vit->second.end() && *next != t.ts) {
          edges.push_back({j, *dsg_.index_of(*next), EdgeType::rw, op.key});
        }
      } else if (op.kind == EventKind::pred_read) {
        std::map<Key, VersionId> sel;
        for (const auto& e : op.vset) sel[e.key] = e.version;
        for (auto it = vo_.order.lower_bound(op.pred.lo); it != vo_.order.end() && it->first < op.pred.hi; ++it) {
          sel.emplace(it->first, std::nullopt);
        }
        const auto label = op.pred.range_text();
        for (const auto& [k, v] : sel) {
          for (auto c : changers(op.pred, k, v, false)) {
            if (c != t.ts) edges.push_back({*dsg_.index_of(c), j, EdgeType::pred_wr, label});
          }
          for (auto c : changers(op.pred, k, v, true)) {
            if (c != t.ts) edges.push_back({j, *dsg_.index_of(c), EdgeType::pred_rw, label});
          }
        }
      }
    }
  }
  for (const auto& [sid, order] : session_order(h)) {
    for (std::size_t i = 1; i < order.size(); ++i) {
      edges.push_back({*dsg_.index_of(order[i - 1]), *dsg_.index_of(order[i]), EdgeType::session, sid});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

bool Checker::is_committed(Timestamp t) const {
  auto it = txns_.find(t);
  return it != txns_.end() && it->second.committed;
}

const Value* Checker::installed(const Key& k, Timestamp ts) const {
  auto it = txns_.find(ts);
  if (it == txns_.end() || !it->second.committed) return nullptr;
  auto w = it->second.final_write.find(k);
  if (w == it->second.final_write.end()) return nullptr;
  return &*it->second.ops[w->second].value;
}

std::vector<Timestamp> Checker::changers(const Predicate& p, const Key& k, VersionId upto, bool after) const {
  std::vector<Timestamp> out;
  auto it = vo_.order.find(k);
  if (it == vo_.order.end() || !p.in_range(k)) return out;
  std::optional<Value> prev;
  for (auto ts : it->second) {
    std::optional<Value> cur = *installed(k, ts);
    bool change = p.matches(prev) != p.matches(cur);
    bool in_window = after ? version_less(upto, ts) : !version_less(upto, ts);
    if (change && in_window) out.push_back(ts);
    prev = std::move(cur);
  }
  return out;
}

std::vector<Finding> Checker::detect(Phenomenon p) const {
  std::vector<Finding> out;
  switch (p) {
    case Phenomenon::G0:
    case Phenomenon::G1c: out = cycles(p); break;
    case Phenomenon::G1a: out = dirty_reads(true); break;
    case Phenomenon::G1b: out = dirty_reads(false); break;
    case Phenomenon::IMP: out = imp(); break;
    case Phenomenon::PMP: out = pmp(); break;
    case Phenomenon::OTV: out = otv(); break;
    case Phenomenon::N_MR: out = n_mr(); break;
    case Phenomenon::N_MW: out = n_mw(); break;
    case Phenomenon::MRWD: out = mrwd(); break;
    case Phenomenon::MYR: out = myr(); break;
    case Phenomenon::LostUpdate: out = item_anti_cycles(true); break;
    case Phenomenon::WriteSkew: out = item_anti_cycles(false); break;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Finding> Checker::detect(const std::vector<Phenomenon>& ps) const {
  std::vector<Finding> out;
  for (auto p : ps) {
    auto f = detect(p);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::vector<Finding> Checker::dirty_reads(bool want_aborted) const {
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    auto check = [&](const Key& k, const VersionId& v, const std::optional<Value>* value) {
      if (!v || *v == ts) return;
      const Value* inst = installed(k, *v);
      if (!inst) {
        if (want_aborted) out.push_back({Phenomenon::G1a, {ts, *v}, {k}});
      } else if (!want_aborted && value && **value != *inst) {
        out.push_back({Phenomenon::G1b, {ts, *v}, {k}});
      }
    };
    for (const auto& op : t.ops) {
      if (op.kind == EventKind::read) {
        check(op.key, op.version, &op.value);
      } else if (op.kind == EventKind::pred_read) {
        for (const auto& e : op.vset) check(e.key, e.version, nullptr);
      }
    }
  }
  return out;
}

std::vector<Finding> Checker::cycles(Phenomenon p) const {
  const auto& edges = dsg_.edges;
  auto adj = adjacency(dsg_.nodes.size(), edges, [&](const DsgEdge& e) {
    if (p == Phenomenon::G0) return e.type == EdgeType::ww;
    return e.type == EdgeType::ww || e.type == EdgeType::wr || e.type == EdgeType::pred_wr;
  });
  std::vector<Finding> out;
  for (const auto& c : component_cycles(edges, adj)) {
    Finding f{p, {}, {}};
    for (auto n : c.nodes) f.txns.push_back(dsg_.nodes[n]);
    std::set<Key> items;
    for (auto e : c.edges) items.insert(edges[e].label);
    f.items.assign(items.begin(), items.end());
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<Finding> Checker::item_anti_cycles(bool lost_update) const {
  const auto& edges = dsg_.edges;
  const std::size_t n = dsg_.nodes.size();
  auto writes = [&](std::size_t node) { return !txns_.at(dsg_.nodes[node]).final_write.empty(); };
  auto qualifying_rw = [&](const DsgEdge& e) { return e.type == EdgeType::rw && writes(e.from); };
  auto item_edge = [&](const DsgEdge& e) {
    return e.type == EdgeType::ww || e.type == EdgeType::wr || qualifying_rw(e);
  };
  auto to_finding = [&](Phenomenon p, const Cycle& c) {
    Finding f{p, {}, {}};
    for (auto v : c.nodes) f.txns.push_back(dsg_.nodes[v]);
    std::set<Key> items;
    for (auto e : c.edges) items.insert(edges[e].label);
    f.items.assign(items.begin(), items.end());
    return f;
  };

  // Per-item graphs: which rw edges sit on a single-item cycle.
  std::map<Key, std::vector<std::size_t>> rw_by_item;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (qualifying_rw(edges[i])) rw_by_item[edges[i].label].push_back(i);
  }
  std::vector<Finding> out;
  std::set<std::size_t> on_item_cycle;
  for (const auto& [item, rws] : rw_by_item) {
    auto adj = adjacency(n, edges, [&](const DsgEdge& e) { return e.label == item && item_edge(e); });
    auto comp = scc(adj);
    std::map<std::size_t, std::vector<std::size_t>> by_comp;
    for (auto e : rws) {
      if (comp[edges[e].from] == comp[edges[e].to]) {
        on_item_cycle.insert(e);
        by_comp[comp[edges[e].from]].push_back(e);
      }
    }
    if (!lost_update) continue;
    for (const auto& [c, through] : by_comp) {
      if (auto cyc = cycle_through(edges, adj, comp, through)) out.push_back(to_finding(Phenomenon::LostUpdate, *cyc));
    }
  }
  if (lost_update) return out;

  auto adj = adjacency(n, edges, item_edge);
  auto comp = scc(adj);
  std::map<std::size_t, std::vector<std::size_t>> by_comp;
  for (const auto& [item, rws] : rw_by_item) {
    for (auto e : rws) {
      if (!on_item_cycle.count(e) && comp[edges[e].from] == comp[edges[e].to]) by_comp[comp[edges[e].from]].push_back(e);
    }
  }
  for (auto& [c, through] : by_comp) {
    std::sort(through.begin(), through.end());
    if (auto cyc = cycle_through(edges, adj, comp, through)) out.push_back(to_finding(Phenomenon::WriteSkew, *cyc));
  }
  return out;
}

std::vector<Finding> Checker::imp() const {
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    // bottom counts as a source of its own; it just has no txn to list
    std::map<Key, std::set<VersionId, decltype(&version_less)>> sources;
    for (const auto& op : t.ops) {
      if (op.kind != EventKind::read || is_own(t, op.version)) continue;
      sources.try_emplace(op.key, &version_less).first->second.insert(op.version);
    }
    for (const auto& [k, s] : sources) {
      if (s.size() < 2) continue;
      Finding f{Phenomenon::IMP, {ts}, {k}};
      for (const auto& v : s) {
        if (v) f.txns.push_back(*v);
      }
      out.push_back(std::move(f));
    }
  }
  return out;
}

std::vector<Finding> Checker::pmp() const {
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    std::vector<const Op*> preds;
    for (const auto& op : t.ops) {
      if (op.kind == EventKind::pred_read) preds.push_back(&op);
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
      for (std::size_t j = i + 1; j < preds.size(); ++j) {
        const auto& a = *preds[i];
        const auto& b = *preds[j];
        if (!a.pred.overlaps(b.pred)) continue;
        Key lo = std::max(a.pred.lo, b.pred.lo), hi = std::min(a.pred.hi, b.pred.hi);
        std::map<Key, VersionId> sa, sb;
        std::set<Key> keys;
        for (const auto& e : a.vset) {
          sa[e.key] = e.version;
          keys.insert(e.key);
        }
        for (const auto& e : b.vset) {
          sb[e.key] = e.version;
          keys.insert(e.key);
        }
        for (auto it = vo_.order.lower_bound(lo); it != vo_.order.end() && it->first < hi; ++it) keys.insert(it->first);
        auto sel = [](const std::map<Key, VersionId>& m, const Key& k) {
          auto it = m.find(k);
          return it == m.end() ? VersionId{} : it->second;
        };
        bool differ = false;
        for (const Predicate* q : {&a.pred, &b.pred}) {
          std::set<Timestamp> ca, cb;
          for (const auto& k : keys) {
            if (k < lo || k >= hi) continue;
            for (auto c : changers(*q, k, sel(sa, k), false)) ca.insert(c);
            for (auto c : changers(*q, k, sel(sb, k), false)) cb.insert(c);
          }
          ca.erase(ts);
          cb.erase(ts);
          differ = differ || ca != cb;
        }
        if (differ) out.push_back({Phenomenon::PMP, {ts}, {a.pred.range_text(), b.pred.range_text()}});
      }
    }
  }
  return out;
}

std::vector<Finding> Checker::otv() const {
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    std::map<Timestamp, Key> sources;  // writer -> first item read from it
    std::set<Timestamp> reported;
    for (const auto& op : t.ops) {
      if (op.kind != EventKind::read || is_own(t, op.version)) continue;
      for (const auto& [src, x] : sources) {
        if (x == op.key || reported.count(src)) continue;
        const auto& w = txns_.at(src);
        if (w.final_write.count(op.key) && version_less(op.version, src)) {
          out.push_back({Phenomenon::OTV, {src, ts}, {x, op.key}});
          reported.insert(src);
        }
      }
      if (op.version && installed(op.key, *op.version)) sources.emplace(*op.version, op.key);
    }
  }
  return out;
}

std::vector<Finding> Checker::n_mr() const {
  std::vector<Finding> out;
  std::map<std::string, std::vector<Timestamp>> sessions;
  for (const auto& [ts, t] : txns_) {
    if (t.committed && t.session) sessions[*t.session].push_back(ts);
  }
  for (const auto& [sid, order] : sessions) {
    std::map<Key, std::pair<Timestamp, Timestamp>> high;  // key -> (version, reader)
    for (auto ts : order) {
      const auto& t = txns_.at(ts);
      std::set<Key> reported;
      for (const auto& op : t.ops) {
        if (op.kind != EventKind::read || is_own(t, op.version) || reported.count(op.key)) continue;
        auto h = high.find(op.key);
        if (h != high.end() && version_less(op.version, h->second.first)) {
          out.push_back({Phenomenon::N_MR, {h->second.second, ts}, {op.key}});
          reported.insert(op.key);
        }
      }
      for (const auto& op : t.ops) {
        if (op.kind != EventKind::read || !op.version || is_own(t, op.version)) continue;
        auto& h = high[op.key];
        if (h.first < *op.version) h = {*op.version, ts};
      }
    }
  }
  return out;
}

std::vector<Finding> Checker::myr() const {
  std::vector<Finding> out;
  std::map<std::string, std::vector<Timestamp>> sessions;
  for (const auto& [ts, t] : txns_) {
    if (t.committed && t.session) sessions[*t.session].push_back(ts);
  }
  for (const auto& [sid, order] : sessions) {
    std::map<Key, Timestamp> written;
    for (auto ts : order) {
      const auto& t = txns_.at(ts);
      std::set<Key> reported;
      for (const auto& op : t.ops) {
        if (op.kind != EventKind::read || is_own(t, op.version) || reported.count(op.key)) continue;
        auto w = written.find(op.key);
        if (w != written.end() && version_less(op.version, w->second)) {
          out.push_back({Phenomenon::MYR, {w->second, ts}, {op.key}});
          reported.insert(op.key);
        }
      }
      for (const auto& [k, idx] : t.final_write) written[k] = std::max(written[k], ts);
    }
  }
  return out;
}

std::vector<Finding> Checker::n_mw() const {
  struct Pos {
    std::string session;
    std::size_t pos;
  };
  std::map<Timestamp, Pos> where;
  std::map<std::string, std::map<Key, std::vector<std::pair<std::size_t, Timestamp>>>> writes;
  {
    std::map<std::string, std::size_t> next;
    for (const auto& [ts, t] : txns_) {
      if (!t.committed || !t.session) continue;
      std::size_t p = next[*t.session]++;
      where[ts] = {*t.session, p};
      for (const auto& [k, idx] : t.final_write) writes[*t.session][k].push_back({p, ts});
    }
  }
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    std::map<std::string, std::tuple<std::size_t, Timestamp, Key>> seen;  // session -> (pos, S_b, y)
    for (const auto& op : t.ops) {
      if (op.kind != EventKind::read || is_own(t, op.version)) continue;
      for (const auto& [sid, s] : seen) {
        const auto& [p, sb, y] = s;
        auto sw = writes.find(sid);
        if (sw == writes.end()) continue;
        auto kw = sw->second.find(op.key);
        if (kw == sw->second.end()) continue;
        auto it = std::lower_bound(kw->second.begin(), kw->second.end(), std::pair{p, Timestamp{}});
        if (it == kw->second.begin()) continue;
        Timestamp sa = std::prev(it)->second;
        if (sa != ts && version_less(op.version, sa)) {
          out.push_back({Phenomenon::N_MW, {sa, sb, ts}, {op.key, y}});
          break;
        }
      }
      if (op.version && installed(op.key, *op.version)) {
        auto w = where.find(*op.version);
        if (w != where.end()) {
          auto& s = seen[w->second.session];
          if (std::get<1>(s) == Timestamp{} || std::get<0>(s) < w->second.pos) {
            s = {w->second.pos, *op.version, op.key};
          }
        }
      }
    }
  }
  return out;
}

std::vector<Finding> Checker::mrwd() const {
  // txn -> (writer, item) pairs it read from
  std::map<Timestamp, std::vector<std::pair<Timestamp, Key>>> reads_from;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    for (const auto& op : t.ops) {
      if (op.kind == EventKind::read && op.version && !is_own(t, op.version) && installed(op.key, *op.version)) {
        reads_from[ts].push_back({*op.version, op.key});
      }
    }
  }
  std::vector<Finding> out;
  for (const auto& [ts, t] : txns_) {
    if (!t.committed) continue;
    std::vector<std::pair<Timestamp, Key>> mids;  // (T2, y)
    for (const auto& op : t.ops) {
      if (op.kind != EventKind::read || is_own(t, op.version)) continue;
      bool hit = false;
      for (const auto& [t2, y] : mids) {
        auto rf = reads_from.find(t2);
        if (rf == reads_from.end()) continue;
        for (const auto& [t1, x] : rf->second) {
          if (t1 == ts || t1 == t2) continue;
          if (txns_.at(t1).final_write.count(op.key) && version_less(op.version, t1)) {
            std::set<Key> items{x, y, op.key};
            out.push_back({Phenomenon::MRWD, {t1, t2, ts}, {items.begin(), items.end()}});
            hit = true;
            break;
          }
        }
        if (hit) break;
      }
      if (op.version && installed(op.key, *op.version)) mids.push_back({*op.version, op.key});
    }
  }
  return out;
}

Usg build_usg(const Dsg& dsg, const History& h, Timestamp txn) {
  Checker c(h);
  auto self = dsg.index_of(txn);
  if (!self) throw std::invalid_argument("txn " + std::to_string(txn.encoded()) + " is not committed in history");
  const auto& t = c.txns().at(txn);
  Usg u;
  u.txn = txn;
  std::vector<std::size_t> node_of(dsg.nodes.size());
  for (std::size_t i = 0; i < dsg.nodes.size(); ++i) {
    if (i == *self) continue;
    node_of[i] = u.nodes.size();
    u.nodes.push_back({dsg.nodes[i], std::nullopt});
  }
  const std::size_t first_op = u.nodes.size();
  for (std::size_t i = 0; i < t.ops.size(); ++i) u.nodes.push_back({txn, i});
  for (std::size_t i = 1; i < t.ops.size(); ++i) u.edges.push_back({first_op + i - 1, first_op + i, std::nullopt, ""});

  // The op of the split transaction an edge is incident on.
  auto op_for = [&](const DsgEdge& e, bool outgoing) -> std::optional<std::size_t> {
    const Timestamp other = dsg.nodes[outgoing ? e.to : e.from];
    for (std::size_t i = 0; i < t.ops.size(); ++i) {
      const auto& op = t.ops[i];
      switch (e.type) {
        case EdgeType::ww:
          if (op.kind == EventKind::write && t.final_write.at(op.key) == i && op.key == e.label) return i;
          break;
        case EdgeType::wr:
          if (outgoing) {
            if (op.kind == EventKind::write && op.key == e.label && t.final_write.at(op.key) == i) return i;
          } else if (op.kind == EventKind::read && op.key == e.label && op.version == VersionId{other}) {
            return i;
          }
          break;
        case EdgeType::rw:
          if (outgoing) {
            if (op.kind == EventKind::read && op.key == e.label) return i;
          } else if (op.kind == EventKind::write && op.key == e.label && t.final_write.at(op.key) == i) {
            return i;
          }
          break;
        case EdgeType::pred_wr:
        case EdgeType::pred_rw:
          if (outgoing == (e.type == EdgeType::pred_rw)) {
            if (op.kind == EventKind::pred_read && op.pred.range_text() == e.label) return i;
          } else if (op.kind == EventKind::write && t.final_write.at(op.key) == i) {
            return i;
          }
          break;
        case EdgeType::session:
          return std::nullopt;
      }
    }
    return std::nullopt;
  };
  for (const auto& e : dsg.edges) {
    if (e.type == EdgeType::session) continue;
    bool from_self = e.from == *self, to_self = e.to == *self;
    if (!from_self && !to_self) {
      u.edges.push_back({node_of[e.from], node_of[e.to], e.type, e.label});
    } else if (from_self) {
      if (auto op = op_for(e, true)) u.edges.push_back({first_op + *op, node_of[e.to], e.type, e.label});
    } else if (auto op = op_for(e, false)) {
      u.edges.push_back({node_of[e.from], first_op + *op, e.type, e.label});
    }
  }
  return u;
}

std::size_t Usg::order_edges() const {
  return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [](const Edge& e) { return !e.type; }));
}

bool Usg::has_cycle() const {
  Adj adj(nodes.size());
  for (std::size_t i = 0; i < edges.size(); ++i) adj[edges[i].from].push_back({edges[i].to, i});
  auto comp = scc(adj);
  std::vector<std::size_t> size(nodes.size(), 0);
  for (auto c : comp) ++size[c];
  return std::any_of(size.begin(), size.end(), [](std::size_t s) { return s > 1; });
}

std::vector<Finding> detect(const History& h, Phenomenon p) { return Checker(h).detect(p); }

std::string_view name(Level l) {
  switch (l) {
    case Level::read_uncommitted: return "read-uncommitted";
    case Level::read_committed: return "read-committed";
    case Level::monotonic_atomic_view: return "monotonic-atomic-view";
    case Level::item_cut_isolation: return "item-cut-isolation";
    case Level::predicate_cut_isolation: return "predicate-cut-isolation";
    case Level::monotonic_reads: return "monotonic-reads";
    case Level::monotonic_writes: return "monotonic-writes";
    case Level::writes_follow_reads: return "writes-follow-reads";
    case Level::read_your_writes: return "read-your-writes";
    case Level::causal_sessions: return "causal-sessions";
    case Level::repeatable_read: return "repeatable-read";
  }
  return "?";
}

std::vector<Phenomenon> prohibited_by(Level l) {
  using P = Phenomenon;
  switch (l) {
    case Level::read_uncommitted: return {P::G0};
    case Level::read_committed: return {P::G0, P::G1a, P::G1b, P::G1c};
    case Level::monotonic_atomic_view: return {P::G0, P::G1a, P::G1b, P::G1c, P::OTV};
    case Level::item_cut_isolation: return {P::IMP};
    case Level::predicate_cut_isolation: return {P::IMP, P::PMP};
    case Level::monotonic_reads: return {P::N_MR};
    case Level::monotonic_writes: return {P::N_MW};
    case Level::writes_follow_reads: return {P::MRWD};
    case Level::read_your_writes: return {P::MYR};
    case Level::causal_sessions: return {P::N_MR, P::N_MW, P::MRWD, P::MYR};
    case Level::repeatable_read: return {P::G0, P::G1a, P::G1b, P::G1c, P::LostUpdate, P::WriteSkew};
  }
  return {};
}

std::string summary_json(const std::vector<Finding>& findings, const std::vector<Phenomenon>& checked) {
  nlohmann::ordered_json j;
  std::map<Phenomenon, std::size_t> counts;
  for (auto p : checked) counts[p] = 0;
  for (const auto& f : findings) ++counts[f.what];
  auto& c = j["counts"];
  c = nlohmann::ordered_json::object();
  for (auto p : kAllPhenomena) {
    if (counts.count(p)) c[std::string(name(p))] = counts[p];
  }
  j["total"] = findings.size();
  auto levels = nlohmann::ordered_json::array();
  for (auto l : kAllLevels) {
    bool ok = true;
    for (auto p : prohibited_by(l)) {
      auto it = counts.find(p);
      ok = ok && it != counts.end() && it->second == 0;
    }
    if (ok) levels.push_back(std::string(name(l)));
  }
  j["levels"] = levels;
  return j.dump();
}

bool serializability_oracle(const History& h) {
  Checker c(h);
  std::vector<const Checker::Txn*> txns;
  std::set<Key> keys;
  for (const auto& [ts, t] : c.txns()) {
    for (const auto& op : t.ops) {
      if (op.kind == EventKind::pred_read) throw std::invalid_argument("oracle handles item reads only");
      keys.insert(op.key);
    }
    if (t.committed) txns.push_back(&t);
  }
  if (txns.size() > 6) throw std::invalid_argument("oracle limited to 6 committed transactions");
  if (keys.size() > 4) throw std::invalid_argument("oracle limited to 4 keys");

  std::vector<std::size_t> order(txns.size());
  std::iota(order.begin(), order.end(), 0);
  do {
    // Installs must follow timestamp order per key.
    bool ok = true;
    std::map<Key, Timestamp> last_install;
    for (auto i : order) {
      for (const auto& [k, idx] : txns[i]->final_write) {
        auto it = last_install.find(k);
        if (it != last_install.end() && txns[i]->ts < it->second) ok = false;
        last_install[k] = txns[i]->ts;
      }
    }
    if (!ok) continue;
    std::map<Key, VersionId> state;
    for (auto i : order) {
      const auto& t = *txns[i];
      std::set<Key> own;
      for (const auto& op : t.ops) {
        if (op.kind == EventKind::write) {
          own.insert(op.key);
          continue;
        }
        VersionId expect = own.count(op.key) ? VersionId{t.ts} : state[op.key];
        if (expect != op.version) {
          ok = false;
          break;
        }
      }
      if (!ok) break;
      for (const auto& [k, idx] : t.final_write) state[k] = t.ts;
    }
    if (ok) return true;
  } while (std::next_permutation(order.begin(), order.end()));
  return false;
}

}  // namespace hatkv
