#include "hatkv/replica.hpp"

#include <algorithm>
#include <stdexcept>

namespace hatkv {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::string_view kMessageNames[] = {"write_put", "write_ack",    "notify",  "dep_query", "dep_ack",
                                              "anti_entropy", "get_req", "get_resp", "pred_req",  "pred_resp"};

}  // namespace

std::string_view message_kind(const Message& m) { return kMessageNames[m.index()]; }

std::size_t Placement::shard_of(const Key& k) const noexcept {
  return static_cast<std::size_t>(fnv1a(k) % servers_per_cluster);
}

std::vector<NodeId> Placement::replicas(const Key& k) const {
  std::vector<NodeId> out;
  out.reserve(clusters);
  for (ClusterId c = 0; c < clusters; ++c) out.push_back(replica_in(k, c));
  return out;
}

ClusterId Placement::master_cluster(const Key& k) const noexcept {
  return static_cast<ClusterId>(mix_seed(fnv1a(k), master_seed) % clusters);
}

Replica::Replica(NodeId self, const Placement& placement, ReplicaConfig config)
    : self_(self), placement_(placement), config_(config) {
  if (!placement_.is_server(self_)) throw RoutingError("node " + std::to_string(self_) + " is not a server");
}

void Replica::require_replica(const Key& k) const {
  if (!placement_.is_replica(self_, k)) {
    throw RoutingError("node " + std::to_string(self_) + " is not a replica for key " + k);
  }
}

std::vector<NodeId> Replica::scope_replicas(const Key& k) const {
  if (config_.scope == StabilityScope::cluster) {
    return {placement_.replica_in(k, placement_.cluster_of_server(self_))};
  }
  return placement_.replicas(k);
}

std::size_t Replica::expected_for(const WriteRecord& w) const {
  std::size_t per_key = config_.scope == StabilityScope::cluster ? 1 : placement_.clusters;
  return (w.sibs.size() + w.deps.size()) * per_key;
}

bool Replica::holds(const Key& key, Timestamp ts) const {
  if (received_.count({key, ts})) return true;
  auto g = good_.find(key);
  return g != good_.end() && g->second.ts >= ts;
}

std::size_t Replica::acks(Timestamp ts) const {
  auto it = acks_.find(ts);
  return it == acks_.end() ? 0 : it->second.size();
}

std::optional<std::size_t> Replica::expected(Timestamp ts) const {
  auto it = expected_.find(ts);
  if (it == expected_.end()) return std::nullopt;
  return it->second;
}

std::size_t Replica::parked_dep_queries() const noexcept {
  std::size_t n = 0;
  for (const auto& [k, v] : parked_deps_) n += v.size();
  return n;
}

bool Replica::install_good(const WriteRecord& w) {
  auto it = good_.find(w.key);
  if (it != good_.end()) {
    const auto& cur = it->second;
    if (std::tie(w.ts, w.value) <= std::tie(cur.ts, cur.value)) return false;
    it->second = w;
  } else {
    good_.emplace(w.key, w);
  }
  dirty_.insert(w.key);
  if (hooks_.on_good) hooks_.on_good(self_, w);
  return true;
}

void Replica::drop_pending(const Key& k, Timestamp ts) {
  auto pk = pending_.find(k);
  if (pk == pending_.end() || !pk->second.erase(ts)) return;
  if (pk->second.empty()) pending_.erase(pk);
  if (auto bt = pending_by_ts_.find(ts); bt != pending_by_ts_.end()) {
    bt->second.erase(k);
    if (bt->second.empty()) pending_by_ts_.erase(bt);
  }
  if (hooks_.on_pending_drop) hooks_.on_pending_drop(self_, k, ts);
}

std::size_t Replica::gc_key(const Key& k) {
  auto g = good_.find(k);
  auto pk = pending_.find(k);
  if (g == good_.end() || pk == pending_.end()) return 0;
  std::vector<Timestamp> stale;
  for (const auto& [ts, w] : pk->second) {
    if (ts >= g->second.ts) break;
    stale.push_back(ts);
  }
  for (auto ts : stale) drop_pending(k, ts);
  return stale.size();
}

std::size_t Replica::gc_pending() {
  std::vector<Key> keys;
  for (const auto& [k, m] : pending_) keys.push_back(k);
  std::size_t n = 0;
  for (const auto& k : keys) n += gc_key(k);
  return n;
}

bool Replica::lww_merge(const WriteRecord& w) { return install_good(w); }

bool Replica::apply_put(const WriteRecord& w, bool from_client, Outbox& out) {
  require_replica(w.key);
  if (from_client) {
    for (NodeId r : placement_.replicas(w.key)) {
      if (r != self_) out.emplace_back(r, AntiEntropy{{w}});
    }
  }
  if (config_.mode != StorageMode::staged) {
    bool changed = lww_merge(w);
    if (changed) after_change(w.key, out);
    return changed;
  }

  if (!received_.insert({w.key, w.ts}).second) return false;
  if (stable_.count(w.ts)) {
    // Every sibling was already acknowledged; nothing left to wait for.
    install_good(w);
    after_change(w.key, out);
    return true;
  }
  pending_[w.key].emplace(w.ts, w);
  pending_by_ts_[w.ts].insert(w.key);
  expected_.emplace(w.ts, expected_for(w));

  std::set<NodeId> notify_targets;
  for (const auto& s : w.sibs) {
    for (NodeId r : scope_replicas(s)) notify_targets.insert(r);
  }
  for (NodeId r : notify_targets) out.emplace_back(r, Notify{w.ts, w.key});
  for (const auto& d : w.deps) {
    for (NodeId r : scope_replicas(d.key)) out.emplace_back(r, DepQuery{w.ts, d});
  }

  try_promote(w.ts, out);
  gc_key(w.key);
  after_change(w.key, out);
  return true;
}

bool Replica::apply_notify(Timestamp ts, const Key& sib, NodeId src, Outbox& out) {
  if (stable_.count(ts)) return false;
  if (!acks_[ts].insert({false, sib, src}).second) return false;
  try_promote(ts, out);
  return true;
}

bool Replica::apply_dep_ack(Timestamp ts, const Key& dep_key, NodeId src, Outbox& out) {
  if (stable_.count(ts)) return false;
  if (!acks_[ts].insert({true, dep_key, src}).second) return false;
  try_promote(ts, out);
  return true;
}

bool Replica::reveal_gate(Timestamp ts) const {
  if (stable_.count(ts)) return true;
  auto e = expected_.find(ts);
  return e != expected_.end() && acks(ts) >= e->second;
}

void Replica::try_promote(Timestamp ts, Outbox& out) {
  auto e = expected_.find(ts);
  if (e == expected_.end() || stable_.count(ts)) return;
  std::size_t have = acks(ts);
  if (have > e->second) {
    throw std::logic_error("ack count " + std::to_string(have) + " exceeds expected " +
                           std::to_string(e->second) + " for ts " + std::to_string(ts.encoded()));
  }
  if (have < e->second) return;
  stable_.insert(ts);
  acks_.erase(ts);
  expected_.erase(e);
  std::set<Key> keys;
  if (auto bt = pending_by_ts_.find(ts); bt != pending_by_ts_.end()) keys = bt->second;
  for (const auto& k : keys) {
    WriteRecord w = pending_.at(k).at(ts);
    install_good(w);
    drop_pending(k, ts);
    gc_key(k);
    after_change(k, out);
  }
}

GetResult Replica::serve_get(const Key& key, const VersionId& required) const {
  auto g = good_.find(key);
  if (!required) {
    if (g == good_.end()) return {};
    return {false, g->second};
  }
  if (g != good_.end() && g->second.ts >= *required) return {false, g->second};
  if (config_.mode == StorageMode::staged) {
    if (auto pk = pending_.find(key); pk != pending_.end()) {
      if (auto w = pk->second.find(*required); w != pk->second.end()) return {false, w->second};
    }
  }
  return {true, std::nullopt};
}

PredicateResult Replica::serve_predicate(const Predicate& p, const std::map<Key, Timestamp>& required) const {
  std::set<Key> keys;
  for (auto it = good_.lower_bound(p.lo); it != good_.end() && it->first < p.hi; ++it) keys.insert(it->first);
  for (auto it = required.lower_bound(p.lo); it != required.end() && it->first < p.hi; ++it) {
    if (placement_.is_replica(self_, it->first)) keys.insert(it->first);
  }
  PredicateResult res;
  for (const auto& k : keys) {
    auto r = required.find(k);
    auto got = serve_get(k, r == required.end() ? VersionId{} : VersionId{r->second});
    if (got.parked) return {true, {}};
    if (got.record) res.records.push_back(std::move(*got.record));
  }
  return res;
}

std::optional<WriteRecord> Replica::master_apply(const MasterOp& op) {
  if (const auto* k = std::get_if<Key>(&op)) {
    if (placement_.master(*k) != self_) throw RoutingError("node is not the master for " + *k);
    auto g = good_.find(*k);
    if (g == good_.end()) return std::nullopt;
    return g->second;
  }
  const auto& w = std::get<WriteRecord>(op);
  if (placement_.master(w.key) != self_) throw RoutingError("node is not the master for " + w.key);
  lww_merge(w);
  return good_.at(w.key);
}

std::vector<NodeId> Replica::anti_entropy_peers() const {
  std::vector<NodeId> peers;
  const auto shard = placement_.shard_of_server(self_);
  for (ClusterId c = 0; c < placement_.clusters; ++c) {
    NodeId n = placement_.server(c, shard);
    if (n != self_) peers.push_back(n);
  }
  return peers;
}

AntiEntropy Replica::anti_entropy_step(NodeId peer, bool full) {
  if (placement_.shard_of_server(peer) != placement_.shard_of_server(self_) || peer == self_) {
    throw RoutingError("anti-entropy peer shares no keys");
  }
  AntiEntropy ae;
  if (full) {
    for (const auto& [k, w] : good_) ae.records.push_back(w);
  } else {
    for (const auto& k : dirty_) ae.records.push_back(good_.at(k));
  }
  return ae;
}

void Replica::anti_entropy_round(bool full, Outbox& out) {
  if (full || !dirty_.empty()) {
    for (NodeId peer : anti_entropy_peers()) {
      auto ae = anti_entropy_step(peer, full);
      if (!ae.records.empty()) out.emplace_back(peer, std::move(ae));
    }
  }
  dirty_.clear();
}

void Replica::after_change(const Key& key, Outbox& out) {
  if (!parked_gets_.empty()) {
    std::vector<std::pair<NodeId, GetReq>> still;
    for (auto& [src, req] : parked_gets_) {
      if (req.key != key) {
        still.emplace_back(src, std::move(req));
        continue;
      }
      auto r = serve_get(req.key, req.required);
      if (r.parked) {
        still.emplace_back(src, std::move(req));
      } else {
        out.emplace_back(req.reply_to, GetResp{req.req_id, req.key, std::move(r.record)});
      }
    }
    parked_gets_ = std::move(still);
  }
  if (!parked_preds_.empty()) {
    std::vector<std::pair<NodeId, PredReq>> still;
    for (auto& [src, req] : parked_preds_) {
      auto r = serve_predicate(req.pred, req.required);
      if (r.parked) {
        still.emplace_back(src, std::move(req));
      } else {
        out.emplace_back(req.reply_to, PredResp{req.req_id, std::move(r.records)});
      }
    }
    parked_preds_ = std::move(still);
  }
  if (auto pd = parked_deps_.find(key); pd != parked_deps_.end()) {
    std::vector<std::pair<NodeId, DepQuery>> still;
    for (auto& [src, q] : pd->second) {
      if (holds(q.dep.key, q.dep.ts)) {
        out.emplace_back(src, DepAck{q.waiting, q.dep.key});
      } else {
        still.emplace_back(src, std::move(q));
      }
    }
    if (still.empty()) {
      parked_deps_.erase(pd);
    } else {
      pd->second = std::move(still);
    }
  }
}

bool Replica::handle(NodeId src, const Message& msg, Outbox& out) {
  return std::visit(
      [&](const auto& m) -> bool {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, WritePut>) {
          if (config_.mode == StorageMode::master && placement_.master(m.record.key) != self_) {
            out.emplace_back(placement_.master(m.record.key), m);
            return false;
          }
          bool changed = apply_put(m.record, m.from_client, out);
          if (m.from_client) out.emplace_back(m.reply_to, WriteAck{m.req_id, m.record.key});
          return changed;
        } else if constexpr (std::is_same_v<T, Notify>) {
          return apply_notify(m.ts, m.sib, src, out);
        } else if constexpr (std::is_same_v<T, DepQuery>) {
          if (holds(m.dep.key, m.dep.ts)) {
            out.emplace_back(src, DepAck{m.waiting, m.dep.key});
          } else {
            parked_deps_[m.dep.key].emplace_back(src, m);
          }
          return false;
        } else if constexpr (std::is_same_v<T, DepAck>) {
          return apply_dep_ack(m.waiting, m.dep_key, src, out);
        } else if constexpr (std::is_same_v<T, AntiEntropy>) {
          bool changed = false;
          for (const auto& w : m.records) {
            if (config_.mode == StorageMode::staged) {
              // Even a superseded record must be taken in so its notifies go out.
              changed = apply_put(w, false, out) || changed;
            } else {
              require_replica(w.key);
              if (lww_merge(w)) {
                changed = true;
                after_change(w.key, out);
              }
            }
          }
          return changed;
        } else if constexpr (std::is_same_v<T, GetReq>) {
          if (config_.mode == StorageMode::master && placement_.master(m.key) != self_) {
            out.emplace_back(placement_.master(m.key), m);
            return false;
          }
          require_replica(m.key);
          auto r = serve_get(m.key, m.required);
          if (r.parked) {
            parked_gets_.emplace_back(src, m);
          } else {
            out.emplace_back(m.reply_to, GetResp{m.req_id, m.key, std::move(r.record)});
          }
          return false;
        } else if constexpr (std::is_same_v<T, PredReq>) {
          auto r = serve_predicate(m.pred, m.required);
          if (r.parked) {
            parked_preds_.emplace_back(src, m);
          } else {
            out.emplace_back(m.reply_to, PredResp{m.req_id, std::move(r.records)});
          }
          return false;
        } else {
          throw RoutingError(std::string("replica cannot handle ") + std::string(message_kind(msg)));
        }
      },
      msg);
}

}  // namespace hatkv
