#include "hatkv/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

namespace hatkv {

namespace {

enum TimerKind : std::uint64_t { kOpTimeout = 1, kResend = 2, kWake = 3, kAeTick = 4, kScenario = 5 };

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

void WorkloadSpec::validate() const {
  if (key_count == 0) throw ConfigError("keys: must be positive");
  if (txn_len == 0) throw ConfigError("txn-len: must be at least 1");
  if (read_fraction < 0 || read_fraction > 1) throw ConfigError("read-frac: must lie in [0, 1]");
  if (scan_fraction < 0 || scan_fraction > 1) throw ConfigError("scan fraction: must lie in [0, 1]");
  if (abort_fraction < 0 || abort_fraction > 1) throw ConfigError("abort fraction: must lie in [0, 1]");
  if (clients == 0 || clients >= Timestamp::kClientSpace) throw ConfigError("clients: must be in [1, 9999]");
}

void RunConfig::validate() const {
  workload.validate();
  if (clusters == 0) throw ConfigError("clusters: must be positive");
  if (servers == 0) throw ConfigError("servers: must be positive");
  if (rtt && rtt->size() < clusters) throw ConfigError("rtt-matrix: fewer regions than clusters");
  if (!rtt && clusters > RttMatrix::ec2_default().size()) throw ConfigError("clusters: bundled table has 8 regions");
  if (rtt_scale <= 0) throw ConfigError("rtt scale: must be positive");
  if (jitter < 0 || jitter >= 1) throw ConfigError("jitter: must lie in [0, 1)");
  if (roam < 0 || roam > 1) throw ConfigError("roam: must lie in [0, 1]");
  if (op_timeout_ms <= 0) throw ConfigError("timeout: must be positive");
  if (ae_interval_ms <= 0) throw ConfigError("anti-entropy interval: must be positive");
  if (isolation == Isolation::master && workload.scan_fraction > 0) {
    throw ConfigError("mode: master does not serve predicate reads");
  }
  for (const auto& t : script) {
    if (t.client >= workload.clients) throw ConfigError("script: client index out of range");
  }
  // Construct a client to surface mode conflicts early.
  ClientConfig probe;
  probe.client_id = 1;
  probe.isolation = isolation;
  probe.sessions = sessions;
  TxClient(probe, Placement{clusters, servers, seed});
}

Key key_name(std::size_t index, std::size_t key_count) {
  std::size_t width = std::to_string(key_count > 0 ? key_count - 1 : 0).size();
  std::string digits = std::to_string(index);
  return "k" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

std::vector<TxnPlan> gen_workload(const WorkloadSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(mix_seed(seed, 0x776f726b));
  std::vector<TxnPlan> out;
  out.reserve(spec.duration_txns);
  for (std::size_t t = 0; t < spec.duration_txns; ++t) {
    TxnPlan plan;
    plan.client = t % spec.clients;
    for (std::size_t j = 0; j < spec.txn_len; ++j) {
      PlannedOp op;
      std::size_t idx = rng.below(spec.key_count);
      op.key = key_name(idx, spec.key_count);
      if (rng.bernoulli(spec.read_fraction)) {
        if (spec.scan_fraction > 0 && rng.bernoulli(spec.scan_fraction)) {
          op.kind = PlannedOp::Kind::scan;
          std::size_t end = idx + spec.scan_width;
          op.hi = end < spec.key_count ? key_name(end, spec.key_count) : "l";
        }
      } else {
        op.kind = PlannedOp::Kind::write;
        op.value.resize(spec.value_size);
        for (auto& c : op.value) c = static_cast<char>(rng.next() & 0xff);
      }
      plan.ops.push_back(std::move(op));
    }
    plan.abort = spec.abort_fraction > 0 && rng.bernoulli(spec.abort_fraction);
    out.push_back(std::move(plan));
  }
  return out;
}

std::vector<Phenomenon> prohibited_for(Isolation iso, CutIsolation cut, const SessionGuarantees& s) {
  std::vector<Phenomenon> out;
  auto add = [&](Level l) {
    for (auto p : prohibited_by(l)) {
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
  };
  switch (iso) {
    case Isolation::ru: add(Level::read_uncommitted); break;
    case Isolation::rc:
    case Isolation::master: add(Level::read_committed); break;
    case Isolation::mav: add(Level::monotonic_atomic_view); break;
  }
  if (cut == CutIsolation::item) add(Level::item_cut_isolation);
  if (cut == CutIsolation::predicate) add(Level::predicate_cut_isolation);
  if (s.mr) add(Level::monotonic_reads);
  if (s.mw) add(Level::monotonic_writes);
  if (s.wfr) add(Level::writes_follow_reads);
  if (s.ryw) add(Level::read_your_writes);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<NodeId>> resolve_groups(const ScenarioAction& a, const RunConfig& cfg) {
  const std::size_t servers = cfg.clusters * cfg.servers;
  const std::size_t nodes = servers + cfg.workload.clients;
  auto names = cfg.rtt ? cfg.rtt->names() : RttMatrix::ec2_default().names();
  names.resize(cfg.clusters);
  auto cluster_of = [&](NodeId n) -> ClusterId {
    return n < servers ? static_cast<ClusterId>(n / cfg.servers) : static_cast<ClusterId>((n - servers) % cfg.clusters);
  };
  std::vector<int> owner(nodes, -1);
  auto parse_index = [](const std::string& tok) -> std::optional<std::size_t> {
    if (tok.size() < 2 || (tok[0] != 's' && tok[0] != 'c')) return std::nullopt;
    if (!std::all_of(tok.begin() + 1, tok.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
    return std::stoull(tok.substr(1));
  };
  // Explicit nodes first.
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    for (const auto& tok : a.groups[g]) {
      if (std::find(names.begin(), names.end(), tok) != names.end()) continue;
      auto idx = parse_index(tok);
      if (!idx) throw ConfigError("scenario: unknown token '" + tok + "'");
      NodeId n = tok[0] == 's' ? static_cast<NodeId>(*idx) : static_cast<NodeId>(servers + *idx);
      if ((tok[0] == 's' && *idx >= servers) || (tok[0] == 'c' && *idx >= cfg.workload.clients)) {
        throw ConfigError("scenario: no such node '" + tok + "'");
      }
      if (owner[n] != -1) throw ConfigError("scenario: node '" + tok + "' listed twice");
      owner[n] = static_cast<int>(g);
    }
  }
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    for (const auto& tok : a.groups[g]) {
      auto it = std::find(names.begin(), names.end(), tok);
      if (it == names.end()) continue;
      auto c = static_cast<ClusterId>(it - names.begin());
      for (NodeId n = 0; n < nodes; ++n) {
        if (cluster_of(n) == c && owner[n] == -1) owner[n] = static_cast<int>(g);
      }
    }
  }
  std::vector<std::vector<NodeId>> out(a.groups.size());
  for (NodeId n = 0; n < nodes; ++n) {
    if (owner[n] == -1) throw ConfigError("scenario: partition leaves node " + std::to_string(n) + " unassigned");
    out[static_cast<std::size_t>(owner[n])].push_back(n);
  }
  return out;
}

namespace {

class Simulation {
 public:
  explicit Simulation(const RunConfig& cfg)
      : cfg_(cfg),
        placement_{cfg.clusters, cfg.servers, mix_seed(cfg.seed, 0x6d6173)},
        net_(make_topology(cfg), cfg.seed, cfg.jitter, cfg.duplicate_delivery) {
    const auto rcfg = cfg.replica_config();
    for (NodeId n = 0; n < placement_.server_count(); ++n) replicas_.emplace_back(n, placement_, rcfg);
    if (cfg.audit && rcfg.mode == StorageMode::staged) {
      for (auto& r : replicas_) r.set_hooks(auditor(rcfg.scope));
    }
    auto plans = cfg.script.empty() ? gen_workload(cfg.workload, cfg.seed) : cfg.script;
    for (std::size_t i = 0; i < cfg.workload.clients; ++i) {
      ClientConfig cc;
      cc.client_id = static_cast<std::uint32_t>(i + 1);
      cc.node = static_cast<NodeId>(placement_.server_count() + i);
      cc.home_cluster = static_cast<ClusterId>(i % cfg.clusters);
      cc.isolation = cfg.isolation;
      cc.cut = cfg.cut;
      cc.sessions = cfg.sessions;
      cc.session_id = "c" + std::to_string(i);
      cc.durability = cfg.durability;
      cc.seed = cfg.seed;
      clients_.emplace_back(TxClient(cc, placement_), Rng(mix_seed(cfg.seed, 0x726f616d + i)));
    }
    for (auto& p : plans) clients_[p.client].plans.push_back(std::move(p));
  }

  RunResult run() {
    for (std::size_t i = 0; i < cfg_.scenario.size(); ++i) {
      net_.schedule_timer(0, ms_to_sim(cfg_.scenario[i].at_ms), TimerFire{kScenario, i});
    }
    for (NodeId n = 0; n < placement_.server_count(); ++n) {
      net_.schedule_timer(n, ms_to_sim(cfg_.ae_interval_ms), TimerFire{kAeTick, 0});
    }
    active_ = clients_.size();
    for (std::size_t i = 0; i < clients_.size(); ++i) wake(i);

    while (active_ > 0) {
      auto ev = net_.pop();
      if (!ev) throw InvariantViolation("simulation stalled with " + std::to_string(active_) + " active clients");
      dispatch(*ev);
    }
    draining_ = true;
    if (net_.partitioned()) net_.heal();
    net_.run_until_quiescent([&](const auto& ev) { return dispatch(ev); },
                             [&] {
                               for (auto& r : replicas_) {
                                 Outbox out;
                                 r.anti_entropy_round(true, out);
                                 ship(r.id(), out);
                               }
                             });
    finish_metrics();
    return std::move(result_);
  }

 private:
  struct Pending {
    enum class Kind { none, get, scan, commit, ru_write };
    Kind kind = Kind::none;
    std::size_t attempt = 0;
    SimTime started = 0;
    bool remote = false;
    std::set<std::uint64_t> req_ids;
    Key key;
    Predicate pred;
    std::map<std::uint64_t, std::size_t> shard_of_req;
    std::map<std::size_t, PredResp> scan_resps;
    std::vector<WriteRecord> writes;
    std::map<Key, std::set<NodeId>> acks;
    std::map<std::uint64_t, Key> key_of_req;
  };

  struct ClientSim {
    ClientSim(TxClient t, Rng r) : tx(std::move(t)), rng(r) {}
    TxClient tx;
    Rng rng;
    std::deque<TxnPlan> plans;
    bool in_txn = false;
    bool done = false;
    TxnPlan cur;
    std::size_t op = 0;
    SimTime txn_started = 0;
    Pending pend;
    std::uint64_t token = 0;  // invalidates stale timers
  };

  static Topology make_topology(const RunConfig& cfg) {
    cfg.validate();
    RttMatrix base = cfg.rtt ? *cfg.rtt : RttMatrix::ec2_default();
    auto names = base.names();
    names.resize(cfg.clusters);
    Topology t;
    t.cluster_names = names;
    t.rtt = base.select(names).scaled(cfg.rtt_scale);
    for (std::size_t n = 0; n < cfg.clusters * cfg.servers; ++n) t.node_cluster.push_back(static_cast<ClusterId>(n / cfg.servers));
    for (std::size_t i = 0; i < cfg.workload.clients; ++i) t.node_cluster.push_back(static_cast<ClusterId>(i % cfg.clusters));
    return t;
  }

  Replica::Hooks auditor(StabilityScope scope) {
    Replica::Hooks h;
    auto in_scope = [this, scope](const Key& k, NodeId at) {
      if (scope == StabilityScope::global) return placement_.replicas(k);
      return std::vector<NodeId>{placement_.replica_in(k, placement_.cluster_of_server(at))};
    };
    h.on_good = [this, in_scope](NodeId at, const WriteRecord& w) {
      ++result_.metrics.audit_checks;
      for (const auto& s : w.sibs) {
        for (NodeId r : in_scope(s, at)) {
          if (!replicas_[r].holds(s, w.ts)) {
            violation("sibling " + s + "@" + std::to_string(w.ts.encoded()) + " missing at replica " +
                      std::to_string(r) + " when " + w.key + " became visible at " + std::to_string(at));
          }
        }
      }
      for (const auto& d : w.deps) {
        for (NodeId r : in_scope(d.key, at)) {
          if (!replicas_[r].holds(d.key, d.ts)) {
            violation("dependency " + d.key + "@" + std::to_string(d.ts.encoded()) + " missing at replica " +
                      std::to_string(r) + " when " + w.key + " became visible at " + std::to_string(at));
          }
        }
      }
    };
    h.on_pending_drop = [this](NodeId at, const Key& k, Timestamp ts) {
      ++result_.metrics.audit_checks;
      const auto& good = replicas_[at].good();
      auto it = good.find(k);
      if (it == good.end() || it->second.ts < ts) {
        violation("pending " + k + "@" + std::to_string(ts.encoded()) + " dropped at replica " + std::to_string(at) +
                  " without a visible replacement");
      }
    };
    return h;
  }

  [[noreturn]] void violation(const std::string& what) {
    std::ostringstream os;
    os << what << "\nlast events:";
    for (const auto& line : trace_) os << "\n  " << line;
    throw InvariantViolation(os.str());
  }

  void note(const std::string& line) {
    if (trace_.size() == 16) trace_.pop_front();
    trace_.push_back(line);
  }

  bool reachable_from(std::size_t c, NodeId n) const { return net_.reachable(clients_[c].tx.config().node, n); }

  void send(NodeId src, NodeId dst, Message m) {
    ++result_.metrics.messages_by_kind[std::string(message_kind(m))];
    net_.send(src, dst, std::move(m));
  }

  void ship(NodeId src, Outbox& out) {
    for (auto& [dst, m] : out) send(src, dst, std::move(m));
    out.clear();
  }

  bool dispatch(const Network<Message>::Event& ev) {
    if (auto* t = std::get_if<TimerFire>(&ev.body)) {
      on_timer(ev.dst, *t);
      return false;
    }
    const auto& m = std::get<Message>(ev.body);
    if (placement_.is_server(ev.dst)) {
      note(std::to_string(ev.at) + " " + std::to_string(ev.src) + "->" + std::to_string(ev.dst) + " " +
           std::string(message_kind(m)));
      Outbox out;
      bool changed = replicas_[ev.dst].handle(ev.src, m, out);
      ship(ev.dst, out);
      return changed;
    }
    if (!draining_) on_client_message(ev.dst - placement_.server_count(), ev.src, m);
    return false;
  }

  void on_timer(NodeId node, const TimerFire& t) {
    switch (t.kind) {
      case kAeTick: {
        if (draining_) return;
        Outbox out;
        replicas_[node].anti_entropy_round(false, out);
        ship(node, out);
        net_.schedule_timer(node, ms_to_sim(cfg_.ae_interval_ms), TimerFire{kAeTick, 0});
        return;
      }
      case kScenario: {
        if (draining_) return;
        const auto& a = cfg_.scenario[t.id];
        switch (a.kind) {
          case ScenarioAction::Kind::partition: net_.partition(resolve_groups(a, cfg_)); break;
          case ScenarioAction::Kind::heal: net_.heal(); break;
          case ScenarioAction::Kind::stop: stopped_ = true; break;
        }
        return;
      }
      default: break;
    }
    if (draining_) return;
    std::size_t c = node - placement_.server_count();
    auto& cl = clients_[c];
    if (t.id != cl.token) return;
    if (t.kind == kWake) {
      wake(c);
    } else if (t.kind == kOpTimeout) {
      ++cl.pend.attempt;
      if (cl.pend.attempt > cfg_.retry_budget) {
        end_txn(c, TxnOutcome::external_abort);
        return;
      }
      double backoff = std::min(cfg_.backoff_cap_ms, cfg_.backoff_ms * std::pow(2.0, double(cl.pend.attempt - 1)));
      net_.schedule_timer(node, ms_to_sim(backoff), TimerFire{kResend, ++cl.token});
    } else if (t.kind == kResend) {
      transmit(c);
    }
  }

  void wake(std::size_t c) {
    auto& cl = clients_[c];
    if (cl.in_txn || cl.done) return;
    if (stopped_ || cl.plans.empty()) {
      cl.done = true;
      --active_;
      return;
    }
    SimTime start = ms_to_sim(cl.plans.front().start_ms);
    if (net_.now() < start) {
      net_.schedule_timer(cl.tx.config().node, start - net_.now(), TimerFire{kWake, ++cl.token});
      return;
    }
    cl.cur = std::move(cl.plans.front());
    cl.plans.pop_front();
    cl.in_txn = true;
    cl.op = 0;
    cl.txn_started = net_.now();
    ++result_.metrics.issued;
    cl.tx.begin(net_.now());
    step(c);
  }

  void step(std::size_t c) {
    auto& cl = clients_[c];
    const SimTime now = net_.now();
    while (cl.op < cl.cur.ops.size()) {
      const auto& op = cl.cur.ops[cl.op];
      switch (op.kind) {
        case PlannedOp::Kind::write: {
          auto rec = cl.tx.put(op.key, op.value, now);
          if (rec) {
            start(c, Pending::Kind::ru_write);
            cl.pend.writes = {*rec};
            transmit(c);
            return;
          }
          break;
        }
        case PlannedOp::Kind::read:
          if (!cl.tx.get_local(op.key, now)) {
            start(c, Pending::Kind::get);
            cl.pend.key = op.key;
            transmit(c);
            return;
          }
          break;
        case PlannedOp::Kind::scan: {
          Predicate p{op.key, op.hi, std::nullopt};
          if (!cl.tx.scan_local(p, now)) {
            start(c, Pending::Kind::scan);
            cl.pend.pred = p;
            transmit(c);
            return;
          }
          break;
        }
      }
      ++cl.op;
    }
    if (cl.cur.abort) {
      end_txn(c, TxnOutcome::internal_abort);
      return;
    }
    auto writes = cl.tx.prepare_commit();
    if (writes.empty()) {
      end_txn(c, TxnOutcome::committed);
      return;
    }
    start(c, Pending::Kind::commit);
    cl.pend.writes = std::move(writes);
    transmit(c);
  }

  void start(std::size_t c, Pending::Kind k) {
    auto& cl = clients_[c];
    cl.pend = Pending{};
    cl.pend.kind = k;
    cl.pend.started = net_.now();
  }

  /// Sends (or re-sends) whatever the pending operation still lacks.
  void transmit(std::size_t c) {
    auto& cl = clients_[c];
    auto& p = cl.pend;
    const NodeId self = cl.tx.config().node;
    const ClusterId home = cl.tx.config().home_cluster;
    Reachable reach = [&](NodeId n) { return reachable_from(c, n); };
    const bool first = p.req_ids.empty();
    auto route = [&] { return p.attempt + (cfg_.roam > 0 && cl.rng.bernoulli(cfg_.roam) ? 1 : 0); };
    auto mark_remote = [&](NodeId target) {
      if (first && placement_.cluster_of_server(target) != home) p.remote = true;
    };
    switch (p.kind) {
      case Pending::Kind::get: {
        NodeId target = cl.tx.choose_replica(p.key, reach, route());
        mark_remote(target);
        auto id = next_req_++;
        p.req_ids.insert(id);
        send(self, target, cl.tx.get_request(p.key, id));
        break;
      }
      case Pending::Kind::scan: {
        auto reqs = cl.tx.scan_requests(p.pred, next_req_);
        next_req_ += reqs.size();
        for (auto& [shard, req] : reqs) {
          if (p.scan_resps.count(shard)) continue;
          NodeId target = cl.tx.choose_shard_replica(shard, reach, route());
          mark_remote(target);
          p.req_ids.insert(req.req_id);
          p.shard_of_req[req.req_id] = shard;
          send(self, target, std::move(req));
        }
        break;
      }
      case Pending::Kind::commit:
      case Pending::Kind::ru_write: {
        const std::size_t need = cl.tx.acks_needed();
        for (const auto& w : p.writes) {
          auto& got = p.acks[w.key];
          if (got.size() >= need) continue;
          for (NodeId target : cl.tx.commit_targets(w.key, reach, route())) {
            if (got.count(target)) continue;
            mark_remote(target);
            auto id = next_req_++;
            p.req_ids.insert(id);
            p.key_of_req[id] = w.key;
            send(self, target, WritePut{id, self, w, true});
          }
          if (first) {
            ++result_.metrics.writes_shipped;
            metadata_sum_ += static_cast<double>(metadata_bytes(w));
          }
        }
        break;
      }
      case Pending::Kind::none: return;
    }
    net_.schedule_timer(self, ms_to_sim(cfg_.op_timeout_ms), TimerFire{kOpTimeout, ++cl.token});
  }

  void op_done(std::size_t c) {
    auto& cl = clients_[c];
    double ms = sim_to_ms(net_.now() - cl.pend.started);
    op_latencies_.push_back(ms);
    if (cl.pend.remote) {
      ++result_.metrics.remote_ops;
      remote_latency_sum_ += net_.now() - cl.pend.started;
    }
    cl.pend = Pending{};
    ++cl.token;
  }

  void on_client_message(std::size_t c, NodeId src, const Message& m) {
    auto& cl = clients_[c];
    auto& p = cl.pend;
    if (!cl.in_txn) return;
    if (const auto* r = std::get_if<GetResp>(&m)) {
      if (p.kind != Pending::Kind::get || !p.req_ids.count(r->req_id)) return;
      op_done(c);
      cl.tx.on_get(*r, net_.now());
      ++cl.op;
      step(c);
    } else if (const auto* r = std::get_if<PredResp>(&m)) {
      if (p.kind != Pending::Kind::scan || !p.shard_of_req.count(r->req_id)) return;
      p.scan_resps.emplace(p.shard_of_req[r->req_id], *r);
      if (p.scan_resps.size() < placement_.servers_per_cluster) return;
      std::vector<PredResp> resps;
      for (auto& [s, resp] : p.scan_resps) resps.push_back(std::move(resp));
      Predicate pred = p.pred;
      op_done(c);
      cl.tx.on_scan(pred, resps, net_.now());
      ++cl.op;
      step(c);
    } else if (const auto* a = std::get_if<WriteAck>(&m)) {
      if ((p.kind != Pending::Kind::commit && p.kind != Pending::Kind::ru_write) || !p.key_of_req.count(a->req_id)) {
        return;
      }
      p.acks[p.key_of_req[a->req_id]].insert(src);
      const std::size_t need = cl.tx.acks_needed();
      for (const auto& w : p.writes) {
        if (p.acks[w.key].size() < need) return;
      }
      bool commit = p.kind == Pending::Kind::commit;
      op_done(c);
      if (commit) {
        end_txn(c, TxnOutcome::committed);
      } else {
        ++cl.op;
        step(c);
      }
    }
  }

  void end_txn(std::size_t c, TxnOutcome outcome) {
    auto& cl = clients_[c];
    cl.tx.finish(outcome, net_.now());
    for (auto& e : cl.tx.take_events()) {
      e.seq_no = result_.history.size();
      result_.history.push_back(std::move(e));
    }
    auto& m = result_.metrics;
    switch (outcome) {
      case TxnOutcome::committed: ++m.committed; break;
      case TxnOutcome::internal_abort: ++m.internal_aborts; break;
      case TxnOutcome::external_abort: ++m.external_aborts; break;
    }
    txn_latency_sum_ += sim_to_ms(net_.now() - cl.txn_started);
    cl.in_txn = false;
    cl.pend = Pending{};
    if (stopped_ || cl.plans.empty()) {
      cl.done = true;
      --active_;
      ++cl.token;
      return;
    }
    // Next transaction on a fresh event so long local-only chains do not recurse.
    net_.schedule_timer(cl.tx.config().node, 0, TimerFire{kWake, ++cl.token});
  }

  void finish_metrics() {
    auto& m = result_.metrics;
    m.messages = net_.messages_sent();
    m.cross_cluster_messages = net_.cross_cluster_sent();
    m.ops = op_latencies_.size();
    if (!op_latencies_.empty()) {
      double sum = 0;
      for (double v : op_latencies_) sum += v;
      m.op_latency_mean_ms = sum / double(op_latencies_.size());
      auto sorted = op_latencies_;
      std::sort(sorted.begin(), sorted.end());
      std::size_t idx = static_cast<std::size_t>(std::ceil(0.99 * double(sorted.size()))) - 1;
      m.op_latency_p99_ms = sorted[std::min(idx, sorted.size() - 1)];
    }
    if (m.remote_ops) m.remote_op_latency_mean_ms = sim_to_ms(remote_latency_sum_) / double(m.remote_ops);
    std::uint64_t txns = m.committed + m.internal_aborts + m.external_aborts;
    if (txns) m.txn_latency_mean_ms = txn_latency_sum_ / double(txns);
    if (m.writes_shipped) m.metadata_bytes_mean = metadata_sum_ / double(m.writes_shipped);
    m.sim_ms = sim_to_ms(net_.now());

    // Convergence: every replica of a key holds the identical visible record.
    std::set<Key> keys;
    for (const auto& r : replicas_) {
      for (const auto& [k, w] : r.good()) keys.insert(k);
      for (const auto& [k, p] : r.pending()) m.stuck += p.size();
      m.stuck += r.parked_requests() + r.parked_dep_queries();
    }
    m.keys_checked = keys.size();
    for (const auto& k : keys) {
      const WriteRecord* first = nullptr;
      bool agree = true;
      for (NodeId n : placement_.replicas(k)) {
        const auto& g = replicas_[n].good();
        auto it = g.find(k);
        if (it == g.end()) {
          agree = false;
        } else if (!first) {
          first = &it->second;
        } else if (!(*first == it->second)) {
          agree = false;
        }
      }
      if (!agree) ++m.keys_diverged;
    }

    if (cfg_.check != CheckLevel::none) {
      auto prohibited = prohibited_for(cfg_.isolation, cfg_.cut, cfg_.sessions);
      std::vector<Phenomenon> ps =
          cfg_.check == CheckLevel::all ? std::vector<Phenomenon>(kAllPhenomena.begin(), kAllPhenomena.end()) : prohibited;
      result_.findings = Checker(result_.history).detect(ps);
      for (const auto& f : result_.findings) {
        ++m.findings;
        ++m.findings_by_phenomenon[std::string(name(f.what))];
        if (std::find(prohibited.begin(), prohibited.end(), f.what) != prohibited.end()) ++m.prohibited_findings;
      }
    }
  }

  const RunConfig& cfg_;
  Placement placement_;
  Network<Message> net_;
  std::vector<Replica> replicas_;
  std::vector<ClientSim> clients_;
  std::size_t active_ = 0;
  bool stopped_ = false;
  bool draining_ = false;
  std::uint64_t next_req_ = 1;
  std::deque<std::string> trace_;
  std::vector<double> op_latencies_;
  SimTime remote_latency_sum_ = 0;
  double txn_latency_sum_ = 0;
  double metadata_sum_ = 0;
  RunResult result_;
};

}  // namespace

RunResult run_scenario(const RunConfig& cfg) {
  Simulation sim(cfg);
  return sim.run();
}

std::string csv_header() {
  return "seed,mode,cut,session,clusters,servers,keys,value_size,txn_len,read_frac,txns,commit_acks,"
         "issued,committed,internal_aborts,external_aborts,ops,op_latency_mean_ms,op_latency_p99_ms,"
         "remote_ops,remote_op_latency_mean_ms,txn_latency_mean_ms,messages,cross_cluster_messages,"
         "writes_shipped,metadata_bytes_mean,audit_checks,keys_checked,keys_diverged,stuck,findings,"
         "prohibited_findings,sim_ms";
}

std::string csv_row(const RunConfig& c, const RunMetrics& m) {
  std::ostringstream os;
  const auto& w = c.workload;
  os << c.seed << ',' << to_string(c.isolation) << ',' << to_string(c.cut) << ',' << c.sessions.to_string() << ','
     << c.clusters << ',' << c.servers << ',' << w.key_count << ',' << w.value_size << ',' << w.txn_len << ','
     << fmt(w.read_fraction, 3) << ',' << w.duration_txns << ',' << c.durability << ',' << m.issued << ','
     << m.committed << ',' << m.internal_aborts << ',' << m.external_aborts << ',' << m.ops << ','
     << fmt(m.op_latency_mean_ms) << ',' << fmt(m.op_latency_p99_ms) << ',' << m.remote_ops << ','
     << fmt(m.remote_op_latency_mean_ms) << ',' << fmt(m.txn_latency_mean_ms) << ',' << m.messages << ','
     << m.cross_cluster_messages << ',' << m.writes_shipped << ',' << fmt(m.metadata_bytes_mean, 2) << ','
     << m.audit_checks << ',' << m.keys_checked << ',' << m.keys_diverged << ',' << m.stuck << ',' << m.findings
     << ',' << m.prohibited_findings << ',' << fmt(m.sim_ms, 3);
  return os.str();
}

std::string summary_text(const RunConfig& c, const RunMetrics& m) {
  std::ostringstream os;
  os << "mode " << to_string(c.isolation) << ", cut " << to_string(c.cut) << ", session " << c.sessions.to_string()
     << ", seed " << c.seed << "\n";
  os << "txns: " << m.issued << " issued, " << m.committed << " committed, " << m.internal_aborts
     << " internal aborts, " << m.external_aborts << " external aborts\n";
  os << "ops: " << m.ops << " networked, mean " << fmt(m.op_latency_mean_ms, 3) << " ms, p99 "
     << fmt(m.op_latency_p99_ms, 3) << " ms; remote " << m.remote_ops << " at mean "
     << fmt(m.remote_op_latency_mean_ms, 3) << " ms\n";
  os << "messages: " << m.messages << " (" << m.cross_cluster_messages << " cross-cluster)";
  for (const auto& [k, n] : m.messages_by_kind) os << " " << k << "=" << n;
  os << "\n";
  os << "metadata: " << fmt(m.metadata_bytes_mean, 1) << " bytes per write over " << m.writes_shipped << " writes\n";
  os << "convergence: " << (m.keys_checked - m.keys_diverged) << "/" << m.keys_checked << " keys agree, " << m.stuck
     << " stuck\n";
  if (m.findings || !m.findings_by_phenomenon.empty()) {
    os << "findings: " << m.findings << " (" << m.prohibited_findings << " prohibited)";
    for (const auto& [k, n] : m.findings_by_phenomenon) os << " " << k << "=" << n;
    os << "\n";
  }
  return os.str();
}

// Demos

namespace {

PlannedOp rd(const Key& k) { return PlannedOp{PlannedOp::Kind::read, k, {}, {}}; }
PlannedOp wr(const Key& k, const Value& v) { return PlannedOp{PlannedOp::Kind::write, k, v, {}}; }

RunConfig demo_base(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.clusters = 2;
  cfg.servers = 1;
  cfg.workload.clients = 2;
  cfg.workload.key_count = 1;
  cfg.check = CheckLevel::all;
  return cfg;
}

}  // namespace

DemoReport demo_lost_update(Isolation iso, bool partition, std::uint64_t seed) {
  RunConfig cfg = demo_base(seed);
  cfg.isolation = iso;
  // Client 0 lives in the first cluster, client 1 in the second.
  cfg.script = {
      TxnPlan{0, 0, {wr("x", "100")}, false},
      TxnPlan{0, 150, {rd("x"), wr("x", "120")}, false},
      TxnPlan{1, partition ? 150.0 : 300.0, {rd("x"), wr("x", "130")}, false},
  };
  if (partition) {
    cfg.scenario = parse_scenario("at 100 partition CA|OR\nat 250 heal\n");
  }
  auto r = run_scenario(cfg);
  return DemoReport{std::move(r.history), std::move(r.findings), r.metrics};
}

DemoReport demo_ryw(bool sticky, std::uint64_t seed) {
  RunConfig cfg = demo_base(seed);
  cfg.workload.clients = 1;
  if (sticky) {
    cfg.isolation = Isolation::mav;
    cfg.sessions = SessionGuarantees::parse("causal-sticky");
  }
  // The write lands in CA; before it can reach OR the client finds itself
  // cut off from CA together with OR.
  cfg.script = {TxnPlan{0, 0, {wr("x", "1")}, false}, TxnPlan{0, 5, {rd("x")}, false}};
  cfg.scenario = parse_scenario("at 2 partition CA|OR,c0\nat 400 heal\n");
  auto r = run_scenario(cfg);
  return DemoReport{std::move(r.history), std::move(r.findings), r.metrics};
}

// Crafted schedules: replicas and clients wired by hand, delivery order scripted.

namespace {

class Bench {
 public:
  Bench(Isolation iso, CutIsolation cut) : placement_{2, 2, 3} {
    auto rcfg = replica_config_for(iso, {});
    for (NodeId n = 0; n < placement_.server_count(); ++n) replicas_.emplace_back(n, placement_, rcfg);
    for (std::uint32_t i = 0; i < 2; ++i) {
      ClientConfig cc;
      cc.client_id = i + 1;
      cc.node = static_cast<NodeId>(placement_.server_count() + i);
      cc.home_cluster = i;
      cc.isolation = iso;
      cc.cut = cut;
      cc.session_id = "c" + std::to_string(i);
      clients_.emplace_back(cc, placement_);
    }
  }

  const Placement& placement() const { return placement_; }
  TxClient& client(std::size_t i) { return clients_[i]; }

  /// Two keys on different shards, sorted.
  std::pair<Key, Key> split_keys() const {
    for (char a = 'a'; a <= 'z'; ++a) {
      for (char b = static_cast<char>(a + 1); b <= 'z'; ++b) {
        Key x(1, a), y(1, b);
        if (placement_.shard_of(x) != placement_.shard_of(y)) return {x, y};
      }
    }
    throw std::logic_error("no split keys");
  }

  void block(NodeId src, NodeId dst) { blocked_.insert({src, dst}); }
  void unblock_all() { blocked_.clear(); }

  /// Delivers everything not on a blocked link, replies to clients included.
  void drain() {
    bool progress = true;
    while (progress) {
      progress = false;
      for (auto it = queue_.begin(); it != queue_.end(); ++it) {
        if (blocked_.count({it->src, it->dst})) continue;
        auto m = std::move(*it);
        queue_.erase(it);
        deliver(m);
        progress = true;
        break;
      }
    }
  }

  void send(NodeId src, NodeId dst, Message m) { queue_.push_back({src, dst, std::move(m)}); }

  ReadResult get(std::size_t c, const Key& k) {
    auto& cl = clients_[c];
    if (auto hit = cl.get_local(k, now_)) return *hit;
    NodeId target = placement_.replica_in(k, cl.config().home_cluster);
    send(cl.config().node, target, cl.get_request(k, ++req_));
    drain();
    auto r = std::get<GetResp>(inbox_.at(c));
    inbox_.erase(c);
    return cl.on_get(r, ++now_);
  }

  ScanResult scan(std::size_t c, const Predicate& p) {
    auto& cl = clients_[c];
    if (auto hit = cl.scan_local(p, now_)) return *hit;
    std::vector<PredResp> resps;
    for (auto& [shard, req] : cl.scan_requests(p, req_ + 1)) {
      req_ += 1;
      send(cl.config().node, placement_.server(cl.config().home_cluster, shard), req);
      drain();
      resps.push_back(std::get<PredResp>(inbox_.at(c)));
      inbox_.erase(c);
    }
    return cl.on_scan(p, resps, ++now_);
  }

  void commit(std::size_t c) {
    auto& cl = clients_[c];
    for (const auto& w : cl.prepare_commit()) {
      send(cl.config().node, placement_.replica_in(w.key, cl.config().home_cluster),
           WritePut{++req_, cl.config().node, w, true});
    }
    drain();
    inbox_.erase(c);
    cl.finish(TxnOutcome::committed, ++now_);
    for (auto& e : cl.take_events()) {
      e.seq_no = history_.size();
      history_.push_back(std::move(e));
    }
  }

  History history() {
    unblock_all();
    drain();
    return history_;
  }

  SimTime tick() { return ++now_; }

 private:
  struct Msg {
    NodeId src;
    NodeId dst;
    Message m;
  };

  void deliver(Msg& msg) {
    if (placement_.is_server(msg.dst)) {
      Outbox out;
      replicas_[msg.dst].handle(msg.src, msg.m, out);
      for (auto& [d, m] : out) send(msg.dst, d, std::move(m));
    } else {
      inbox_.insert_or_assign(msg.dst - placement_.server_count(), std::move(msg.m));
    }
  }

  Placement placement_;
  std::vector<Replica> replicas_;
  std::vector<TxClient> clients_;
  std::deque<Msg> queue_;
  std::set<std::pair<NodeId, NodeId>> blocked_;
  std::map<std::size_t, Message> inbox_;
  History history_;
  std::uint64_t req_ = 0;
  SimTime now_ = 0;
};

}  // namespace

History crafted_schedule(Crafted kind, Isolation iso, CutIsolation cut) {
  Bench b(iso, cut);
  auto [x, y] = b.split_keys();
  const auto& pl = b.placement();
  // Client 0 writes in cluster 0; client 1 reads in cluster 1.
  switch (kind) {
    case Crafted::otv: {
      // y's replication toward cluster 1 is held back, x's is not.
      b.block(pl.replica_in(y, 0), pl.replica_in(y, 1));
      b.client(0).begin(b.tick());
      b.client(0).put(x, "1", b.tick());
      b.client(0).put(y, "1", b.tick());
      b.commit(0);
      b.client(1).begin(b.tick());
      b.get(1, x);
      b.get(1, y);
      b.commit(1);
      break;
    }
    case Crafted::imp: {
      b.client(1).begin(b.tick());
      b.get(1, x);
      b.client(0).begin(b.tick());
      b.client(0).put(x, "1", b.tick());
      b.commit(0);
      b.get(1, x);
      b.commit(1);
      break;
    }
    case Crafted::pmp: {
      Predicate p{"a", "{", std::nullopt};
      b.client(1).begin(b.tick());
      b.scan(1, p);
      b.client(0).begin(b.tick());
      b.client(0).put(x, "1", b.tick());
      b.commit(0);
      b.scan(1, p);
      b.commit(1);
      break;
    }
  }
  return b.history();
}

}  // namespace hatkv
