#include "hatkv/txclient.hpp"

#include <algorithm>
#include <utility>

namespace hatkv {

namespace {

template <typename M>
void raise(M& m, const Key& k, Timestamp ts) {
  auto [it, fresh] = m.emplace(k, ts);
  if (!fresh && it->second < ts) it->second = ts;
}

}  // namespace

Isolation parse_isolation(std::string_view s) {
  if (s == "ru") return Isolation::ru;
  if (s == "rc") return Isolation::rc;
  if (s == "mav") return Isolation::mav;
  if (s == "master") return Isolation::master;
  throw ConfigError("mode: unknown isolation '" + std::string(s) + "'");
}

CutIsolation parse_cut(std::string_view s) {
  if (s == "none") return CutIsolation::none;
  if (s == "item") return CutIsolation::item;
  if (s == "predicate") return CutIsolation::predicate;
  throw ConfigError("cut: unknown cut isolation '" + std::string(s) + "'");
}

std::string_view to_string(Isolation i) {
  switch (i) {
    case Isolation::ru: return "ru";
    case Isolation::rc: return "rc";
    case Isolation::mav: return "mav";
    case Isolation::master: return "master";
  }
  return "?";
}

std::string_view to_string(CutIsolation c) {
  switch (c) {
    case CutIsolation::none: return "none";
    case CutIsolation::item: return "item";
    case CutIsolation::predicate: return "predicate";
  }
  return "?";
}

SessionGuarantees SessionGuarantees::parse(std::string_view list) {
  SessionGuarantees s;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto comma = list.find(',', start);
    auto tok = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (tok == "mr") {
      s.mr = true;
    } else if (tok == "mw") {
      s.mw = true;
    } else if (tok == "wfr") {
      s.wfr = true;
    } else if (tok == "ryw-sticky") {
      s.ryw = s.sticky = true;
    } else if (tok == "causal-sticky") {
      s.mr = s.mw = s.wfr = s.ryw = s.sticky = true;
    } else if (!tok.empty() && tok != "none") {
      throw ConfigError("session: unknown guarantee '" + std::string(tok) + "'");
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return s;
}

std::string SessionGuarantees::to_string() const {
  if (mr && mw && wfr && ryw && sticky) return "causal-sticky";
  std::string out;
  auto add = [&](const char* t) {
    if (!out.empty()) out += ',';
    out += t;
  };
  if (mr) add("mr");
  if (mw) add("mw");
  if (wfr) add("wfr");
  if (ryw) add("ryw-sticky");
  return out.empty() ? "none" : out;
}

ReplicaConfig replica_config_for(Isolation iso, const SessionGuarantees& s) {
  if (iso == Isolation::master) return {StorageMode::master, StabilityScope::global};
  if (iso == Isolation::mav || s.any()) {
    return {StorageMode::staged, s.sticky ? StabilityScope::cluster : StabilityScope::global};
  }
  return {StorageMode::lww, StabilityScope::global};
}

TxClient::TxClient(ClientConfig cfg, Placement placement)
    : cfg_(std::move(cfg)), placement_(placement), rng_(mix_seed(cfg_.seed, cfg_.client_id)) {
  make_timestamp(cfg_.client_id, 0);  // range check
  if (cfg_.sessions.any() && cfg_.isolation == Isolation::ru) {
    throw ConfigError("session: guarantees require buffered writes; not available with ru");
  }
  if (cfg_.sessions.any() && cfg_.isolation == Isolation::master) {
    throw ConfigError("session: guarantees apply to HAT modes, not master");
  }
  if (cfg_.home_cluster >= placement_.clusters) throw ConfigError("client home cluster out of range");
}

void TxClient::require_open(const char* op) const {
  if (!open_) throw UsageError(std::string(op) + " outside a transaction");
}

bool TxClient::staged() const noexcept { return cfg_.isolation == Isolation::mav || cfg_.sessions.any(); }

Timestamp TxClient::next_ts() {
  std::uint64_t seq = std::max(next_seq_, max_seen_seq_ + 1);
  next_seq_ = seq + 1;
  return make_timestamp(cfg_.client_id, seq);
}

Timestamp TxClient::begin(SimTime now) {
  if (open_) throw UsageError("begin inside an open transaction");
  open_ = true;
  has_writes_ = false;
  write_buffer_.clear();
  required_.clear();
  read_cache_.clear();
  pred_cache_.clear();
  txn_reads_.clear();
  txn_observed_.clear();
  events_.clear();
  if (cfg_.isolation == Isolation::ru) {
    ts_ = next_ts();
    fixed_ = true;
  } else {
    ts_ = make_timestamp(cfg_.client_id, std::max(next_seq_, max_seen_seq_ + 1));
    fixed_ = false;
  }
  record(EventKind::begin, now);
  return ts_;
}

void TxClient::record(EventKind kind, SimTime now, std::optional<Key> key, std::optional<Value> value,
                      std::optional<VersionId> version, std::vector<VsetEntry> vset) {
  HistoryEvent e;
  e.sim_time = now;
  e.session = cfg_.session_id;
  e.txn = ts_;
  e.kind = kind;
  e.key = std::move(key);
  e.value = std::move(value);
  e.version = version;
  e.vset = std::move(vset);
  events_.push_back(std::move(e));
}

std::optional<WriteRecord> TxClient::put(const Key& k, Value v, SimTime now) {
  require_open("put");
  if (!valid_key(k)) throw UsageError("invalid key '" + k + "'");
  has_writes_ = true;
  record(EventKind::write, now, k, v, VersionId{ts_});
  if (cfg_.isolation == Isolation::ru) {
    write_buffer_[k] = v;
    return WriteRecord{k, std::move(v), ts_, {k}, {}};
  }
  write_buffer_[k] = std::move(v);
  return std::nullopt;
}

void TxClient::observe(const WriteRecord& w) {
  max_seen_seq_ = std::max(max_seen_seq_, w.ts.seq());
  if (cfg_.isolation == Isolation::mav) {
    for (const auto& s : w.sibs) raise(required_, s, w.ts);
  }
  if (staged()) {
    for (const auto& d : w.deps) raise(required_, d.key, d.ts);
  }
  // Depending on every sibling keeps a later reader of our writes from
  // seeing any part of the observed transaction missing.
  if (cfg_.sessions.wfr) {
    for (const auto& s : w.sibs) raise(txn_observed_, s, w.ts);
  }
}

VersionId TxClient::bound_for(const Key& k) const {
  VersionId out;
  auto take = [&](const std::map<Key, Timestamp>& m) {
    auto it = m.find(k);
    if (it != m.end() && (!out || *out < it->second)) out = it->second;
  };
  if (staged()) take(required_);
  if (cfg_.sessions.mr || cfg_.sessions.ryw) take(session_required_);
  return out;
}

std::optional<ReadResult> TxClient::cached_in_ranges(const Key& k) const {
  for (const auto& [range, entries] : pred_cache_) {
    if (range.first <= k && k < range.second) {
      auto it = entries.find(k);
      if (it == entries.end()) return ReadResult{};
      return it->second;
    }
  }
  return std::nullopt;
}

std::optional<ReadResult> TxClient::get_local(const Key& k, SimTime now) {
  require_open("get");
  std::optional<ReadResult> hit;
  if (auto b = write_buffer_.find(k); b != write_buffer_.end()) {
    hit = ReadResult{b->second, ts_};
  } else if (cfg_.cut != CutIsolation::none) {
    if (auto c = read_cache_.find(k); c != read_cache_.end()) {
      hit = c->second;
    } else if (cfg_.cut == CutIsolation::predicate) {
      hit = cached_in_ranges(k);
    }
  }
  if (hit) record(EventKind::read, now, k, hit->value, hit->version);
  return hit;
}

GetReq TxClient::get_request(const Key& k, std::uint64_t req_id) const {
  return GetReq{req_id, cfg_.node, k, cfg_.isolation == Isolation::master ? VersionId{} : bound_for(k)};
}

ReadResult TxClient::on_get(const GetResp& resp, SimTime now) {
  require_open("get");
  ReadResult r;
  if (resp.record) {
    observe(*resp.record);
    r = ReadResult{resp.record->value, resp.record->ts};
    raise(txn_reads_, resp.key, resp.record->ts);
  }
  if (cfg_.cut != CutIsolation::none) read_cache_.emplace(resp.key, r);
  record(EventKind::read, now, resp.key, r.value, r.version);
  return r;
}

std::optional<ScanResult> TxClient::scan_local(const Predicate& p, SimTime now) {
  require_open("scan");
  if (cfg_.isolation == Isolation::master) throw UsageError("predicate reads are not supported in master mode");
  if (cfg_.cut != CutIsolation::predicate) return std::nullopt;
  auto it = pred_cache_.find({p.lo, p.hi});
  if (it == pred_cache_.end()) return std::nullopt;
  ScanResult res;
  for (const auto& [k, r] : it->second) {
    res.vset.push_back({k, r.version});
    if (p.matches(r.value)) res.matches.push_back(k);
  }
  record(EventKind::pred_read, now, p.range_text(), p.equals, std::nullopt, res.vset);
  return res;
}

std::vector<std::pair<std::size_t, PredReq>> TxClient::scan_requests(const Predicate& p,
                                                                     std::uint64_t req_id_base) const {
  require_open("scan");
  if (cfg_.isolation == Isolation::master) throw UsageError("predicate reads are not supported in master mode");
  std::vector<std::pair<std::size_t, PredReq>> out;
  for (std::size_t s = 0; s < placement_.servers_per_cluster; ++s) {
    PredReq req{req_id_base + s, cfg_.node, p, {}};
    auto add_bounds = [&](const std::map<Key, Timestamp>& m) {
      for (auto it = m.lower_bound(p.lo); it != m.end() && it->first < p.hi; ++it) {
        if (placement_.shard_of(it->first) != s) continue;
        auto b = bound_for(it->first);
        if (b) req.required[it->first] = *b;
      }
    };
    if (staged()) add_bounds(required_);
    if (cfg_.sessions.mr || cfg_.sessions.ryw) add_bounds(session_required_);
    out.emplace_back(s, std::move(req));
  }
  return out;
}

ScanResult TxClient::on_scan(const Predicate& p, const std::vector<PredResp>& resps, SimTime now) {
  require_open("scan");
  std::map<Key, ReadResult> seen;
  for (const auto& resp : resps) {
    for (const auto& w : resp.records) {
      if (!p.in_range(w.key)) continue;
      observe(w);
      seen[w.key] = ReadResult{w.value, w.ts};
    }
  }
  if (cfg_.cut == CutIsolation::predicate) {
    // Versions already fixed by earlier reads in this transaction win.
    for (const auto& [range, entries] : pred_cache_) {
      Predicate other{range.first, range.second, std::nullopt};
      if (!other.overlaps(p)) continue;
      for (auto it = seen.begin(); it != seen.end();) {
        if (other.in_range(it->first) && !entries.count(it->first)) {
          it = seen.erase(it);
        } else {
          ++it;
        }
      }
      for (const auto& [k, r] : entries) {
        if (p.in_range(k)) seen[k] = r;
      }
    }
    for (const auto& [k, r] : read_cache_) {
      if (!p.in_range(k)) continue;
      if (r.version) {
        seen[k] = r;
      } else {
        seen.erase(k);
      }
    }
    pred_cache_[{p.lo, p.hi}] = seen;
  }
  ScanResult res;
  for (const auto& [k, r] : seen) {
    res.vset.push_back({k, r.version});
    if (r.version) raise(txn_reads_, k, *r.version);
    if (p.matches(r.value)) res.matches.push_back(k);
  }
  record(EventKind::pred_read, now, p.range_text(), p.equals, std::nullopt, res.vset);
  return res;
}

NodeId TxClient::pick(std::size_t shard, const Reachable& reachable, std::size_t attempt) {
  NodeId home = placement_.server(cfg_.home_cluster, shard);
  if (cfg_.sessions.sticky) return home;
  if (attempt == 0 && reachable(home)) return home;
  std::vector<NodeId> live;
  for (ClusterId c = 0; c < placement_.clusters; ++c) {
    NodeId n = placement_.server(c, shard);
    if (reachable(n)) live.push_back(n);
  }
  if (live.empty()) return home;
  return live[rng_.below(live.size())];
}

NodeId TxClient::choose_replica(const Key& k, const Reachable& reachable, std::size_t attempt) {
  if (cfg_.isolation == Isolation::master) return placement_.master(k);
  return pick(placement_.shard_of(k), reachable, attempt);
}

NodeId TxClient::choose_shard_replica(std::size_t shard, const Reachable& reachable, std::size_t attempt) {
  return pick(shard, reachable, attempt);
}

std::size_t TxClient::acks_needed() const noexcept {
  if (cfg_.isolation == Isolation::master) return 1;
  return std::min(cfg_.durability + 1, placement_.clusters);
}

std::vector<NodeId> TxClient::commit_targets(const Key& k, const Reachable& reachable, std::size_t attempt) {
  std::vector<NodeId> out{choose_replica(k, reachable, attempt)};
  const std::size_t want = acks_needed();
  for (int pass = 0; pass < 2 && out.size() < want; ++pass) {
    for (NodeId r : placement_.replicas(k)) {
      if (out.size() >= want) break;
      if (std::find(out.begin(), out.end(), r) != out.end()) continue;
      if (pass == 0 && !reachable(r)) continue;
      out.push_back(r);
    }
  }
  return out;
}

void TxClient::fix_timestamp() {
  if (fixed_) return;
  Timestamp provisional = ts_;
  ts_ = next_ts();
  fixed_ = true;
  for (auto& e : events_) {
    e.txn = ts_;
    if (e.version && *e.version == VersionId{provisional}) e.version = VersionId{ts_};
  }
}

std::vector<WriteRecord> TxClient::prepare_commit() {
  require_open("commit");
  if (cfg_.isolation == Isolation::ru) return {};
  fix_timestamp();
  std::vector<Key> sibs;
  for (const auto& [k, v] : write_buffer_) sibs.push_back(k);
  // Reads of this very transaction count for wfr too.
  auto merged = session_deps_;
  for (const auto& [k, ts] : txn_observed_) raise(merged, k, ts);
  std::vector<Dependency> deps;
  for (const auto& [k, ts] : merged) deps.push_back({k, ts});
  std::vector<WriteRecord> out;
  for (const auto& [k, v] : write_buffer_) out.push_back(WriteRecord{k, v, ts_, sibs, deps});
  return out;
}

void TxClient::finish(TxnOutcome outcome, SimTime now) {
  require_open("finish");
  fix_timestamp();
  if (outcome == TxnOutcome::committed) {
    record(EventKind::commit, now);
    for (const auto& [k, ts] : txn_reads_) {
      if (cfg_.sessions.mr) raise(session_required_, k, ts);
    }
    for (const auto& [k, ts] : txn_observed_) raise(session_deps_, k, ts);
    for (const auto& [k, v] : write_buffer_) {
      if (cfg_.sessions.ryw) raise(session_required_, k, ts_);
      if (cfg_.sessions.mw) raise(session_deps_, k, ts_);
    }
  } else {
    record(EventKind::abort, now);
    events_.back().reserved = outcome == TxnOutcome::internal_abort ? "internal" : "external";
  }
  for (auto& e : events_) e.txn = ts_;
  for (auto& e : events_) finished_.push_back(std::move(e));
  events_.clear();
  open_ = false;
}

std::vector<HistoryEvent> TxClient::take_events() { return std::exchange(finished_, {}); }

}  // namespace hatkv
