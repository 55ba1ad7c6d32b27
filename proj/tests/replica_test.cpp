#include <gtest/gtest.h>

#include <algorithm>
#include <deque>

#include "hatkv/replica.hpp"

using namespace hatkv;

namespace {

WriteRecord rec(const Key& k, std::string v, std::uint64_t ts, std::vector<Key> sibs = {},
                std::vector<Dependency> deps = {}) {
  if (sibs.empty()) sibs = {k};
  std::sort(sibs.begin(), sibs.end());
  return WriteRecord{k, std::move(v), Timestamp::from_encoded(ts), std::move(sibs), std::move(deps)};
}

// First key "k<i>" landing on each shard.
Key key_on_shard(const Placement& p, std::size_t shard, int skip = 0) {
  for (int i = 0;; ++i) {
    Key k = "k" + std::to_string(i);
    if (p.shard_of(k) == shard && skip-- == 0) return k;
  }
}

// Replicas wired together by an in-memory message pool.
struct Fleet {
  Placement placement;
  std::vector<Replica> replicas;
  struct InFlight {
    NodeId src, dst;
    Message msg;
  };
  std::deque<InFlight> pool;

  Fleet(std::size_t clusters, std::size_t servers, ReplicaConfig cfg) : placement{clusters, servers, 1} {
    for (NodeId n = 0; n < placement.server_count(); ++n) replicas.emplace_back(n, placement, cfg);
  }
  void post(NodeId src, Outbox& out) {
    for (auto& [dst, m] : out) pool.push_back({src, dst, std::move(m)});
    out.clear();
  }
  void put(const WriteRecord& w, NodeId at) {
    Outbox out;
    replicas[at].handle(at, WritePut{1, at, w, true}, out);
    out.erase(std::remove_if(out.begin(), out.end(),
                             [](auto& p) { return std::holds_alternative<WriteAck>(p.second); }),
              out.end());
    post(at, out);
  }
  void step(std::size_t i) {
    auto f = std::move(pool[i]);
    pool.erase(pool.begin() + static_cast<long>(i));
    if (!placement.is_server(f.dst)) return;
    Outbox out;
    replicas[f.dst].handle(f.src, f.msg, out);
    post(f.dst, out);
  }
  void drain() {
    while (!pool.empty()) step(0);
  }
  void drain_random(Rng& r, const std::function<void()>& after_each = {}) {
    while (!pool.empty()) {
      step(static_cast<std::size_t>(r.below(pool.size())));
      if (after_each) after_each();
    }
  }
};

// Every good record's siblings are held at all their replicas.
bool sibling_invariant(const Fleet& f) {
  for (const auto& r : f.replicas) {
    for (const auto& [k, w] : r.good()) {
      for (const auto& s : w.sibs) {
        for (NodeId n : f.placement.replicas(s)) {
          if (!f.replicas[n].holds(s, w.ts)) return false;
        }
      }
    }
  }
  return true;
}

const ReplicaConfig kStaged{StorageMode::staged, StabilityScope::global};
const ReplicaConfig kLww{StorageMode::lww, StabilityScope::global};

}  // namespace

TEST(Placement, OneReplicaPerCluster) {
  Placement p{3, 4, 0};
  for (int i = 0; i < 100; ++i) {
    Key k = "k" + std::to_string(i);
    auto rs = p.replicas(k);
    ASSERT_EQ(rs.size(), 3u);
    for (ClusterId c = 0; c < 3; ++c) {
      EXPECT_EQ(p.cluster_of_server(rs[c]), c);
      EXPECT_TRUE(p.is_replica(rs[c], k));
    }
    EXPECT_LT(p.master_cluster(k), 3u);
  }
}

TEST(Replica, NotAServer) {
  Placement p{1, 2, 0};
  EXPECT_THROW(Replica(5, p, kStaged), RoutingError);
}

TEST(Replica, PutNotifiesSiblingReplicas) {
  Placement p{1, 2, 0};
  Key x = key_on_shard(p, 0), y = key_on_shard(p, 1);
  Replica rx(p.replica_in(x, 0), p, kStaged);
  Outbox out;
  auto w = rec(x, "1", 10001, {x, y});
  EXPECT_TRUE(rx.apply_put(w, false, out));
  ASSERT_EQ(rx.pending().at(x).size(), 1u);
  EXPECT_TRUE(rx.good().empty());
  std::set<NodeId> dsts;
  for (auto& [d, m] : out) {
    auto* n = std::get_if<Notify>(&m);
    ASSERT_NE(n, nullptr);
    EXPECT_EQ(n->ts.encoded(), 10001u);
    dsts.insert(d);
  }
  EXPECT_EQ(dsts, (std::set<NodeId>{p.replica_in(x, 0), p.replica_in(y, 0)}));
  EXPECT_EQ(*rx.expected(w.ts), 2u);

  out.clear();
  EXPECT_FALSE(rx.apply_put(w, false, out));
  EXPECT_TRUE(out.empty());
}

TEST(Replica, NotRoutedHere) {
  Placement p{1, 2, 0};
  Key x = key_on_shard(p, 0);
  Replica other(p.replica_in(key_on_shard(p, 1), 0), p, kStaged);
  Outbox out;
  EXPECT_THROW(other.apply_put(rec(x, "1", 10001), false, out), RoutingError);
}

TEST(Replica, NotifyBeforePut) {
  Placement p{1, 2, 0};
  Key x = key_on_shard(p, 0), y = key_on_shard(p, 1);
  NodeId nx = p.replica_in(x, 0), ny = p.replica_in(y, 0);
  Replica rx(nx, p, kStaged);
  Outbox out;
  auto ts = Timestamp::from_encoded(10001);
  EXPECT_TRUE(rx.apply_notify(ts, y, ny, out));
  EXPECT_EQ(rx.acks(ts), 1u);
  EXPECT_TRUE(rx.good().empty());
  EXPECT_FALSE(rx.apply_notify(ts, y, ny, out));  // duplicate
  rx.apply_put(rec(x, "1", 10001, {x, y}), false, out);
  EXPECT_TRUE(rx.good().empty());
  EXPECT_FALSE(rx.reveal_gate(ts));
  rx.apply_notify(ts, x, nx, out);
  EXPECT_TRUE(rx.reveal_gate(ts));
  ASSERT_EQ(rx.good().count(x), 1u);
  EXPECT_EQ(rx.good().at(x).value, "1");
  EXPECT_TRUE(rx.pending().empty());
}

TEST(Replica, PromotionSkippedWhenSuperseded) {
  Placement p{1, 1, 0};
  Replica r(0, p, kStaged);
  Outbox out;
  r.apply_put(rec("x", "new", 20001), false, out);
  r.handle(0, Notify{Timestamp::from_encoded(20001), "x"}, out);
  ASSERT_EQ(r.good().at("x").ts.encoded(), 20001u);
  r.apply_put(rec("x", "old", 10001), false, out);
  r.handle(0, Notify{Timestamp::from_encoded(10001), "x"}, out);
  EXPECT_EQ(r.good().at("x").value, "new");
  EXPECT_TRUE(r.pending().empty());
}

TEST(Replica, BothArrivalOrdersAgree) {
  for (bool newer_first : {true, false}) {
    Fleet f(1, 1, kStaged);
    auto a = rec("x", "a", 10001), b = rec("x", "b", 20001);
    f.put(newer_first ? b : a, 0);
    f.put(newer_first ? a : b, 0);
    f.drain();
    EXPECT_EQ(f.replicas[0].good().at("x").value, "b");
    EXPECT_TRUE(f.replicas[0].pending().empty());
  }
}

TEST(Replica, ServeGetBranches) {
  Placement p{1, 2, 0};
  Key x = key_on_shard(p, 0), y = key_on_shard(p, 1);
  NodeId ny = p.replica_in(y, 0);
  Replica ry(ny, p, kStaged);
  Outbox out;
  auto bottom = ry.serve_get(y, std::nullopt);
  EXPECT_FALSE(bottom.parked);
  EXPECT_FALSE(bottom.record);

  ry.apply_put(rec(y, "1", 10001, {x, y}), false, out);
  auto got = ry.serve_get(y, Timestamp::from_encoded(10001));
  ASSERT_TRUE(got.record);
  EXPECT_EQ(got.record->value, "1");
  EXPECT_FALSE(ry.serve_get(y, std::nullopt).record);
  EXPECT_TRUE(ry.serve_get(y, Timestamp::from_encoded(20001)).parked);
}

TEST(Replica, ServeGetPrefersGoodForBottom) {
  Placement p{1, 1, 0};
  Replica r(0, p, kStaged);
  Outbox out;
  r.apply_put(rec("k", "g", 30002), false, out);
  r.apply_notify(Timestamp::from_encoded(30002), "k", 0, out);
  r.apply_put(rec("k", "p", 40001), false, out);
  auto got = r.serve_get("k", std::nullopt);
  ASSERT_TRUE(got.record);
  EXPECT_EQ(got.record->ts.encoded(), 30002u);
  got = r.serve_get("k", Timestamp::from_encoded(10001));
  EXPECT_EQ(got.record->ts.encoded(), 30002u);
}

TEST(Replica, ParkedGetAnsweredLater) {
  Placement p{1, 1, 0};
  Replica r(0, p, kStaged);
  Outbox out;
  r.handle(5, GetReq{9, 5, "k", Timestamp::from_encoded(10001)}, out);
  EXPECT_TRUE(out.empty());
  EXPECT_EQ(r.parked_requests(), 1u);
  r.apply_put(rec("k", "v", 10001), false, out);
  auto it = std::find_if(out.begin(), out.end(), [](auto& m) { return std::holds_alternative<GetResp>(m.second); });
  ASSERT_NE(it, out.end());
  EXPECT_EQ(it->first, 5u);
  EXPECT_EQ(std::get<GetResp>(it->second).record->value, "v");
  EXPECT_EQ(r.parked_requests(), 0u);
}

TEST(Replica, LwwOrder) {
  Placement p{1, 1, 0};
  Replica r(0, p, kLww);
  EXPECT_TRUE(r.lww_merge(rec("k", "a", 10001)));
  EXPECT_TRUE(r.lww_merge(rec("k", "b", 20001)));
  EXPECT_FALSE(r.lww_merge(rec("k", "a", 10001)));
  EXPECT_EQ(r.good().at("k").value, "b");
}

TEST(Replica, LwwSemilattice) {
  std::vector<WriteRecord> ws = {rec("k", "a", 10001), rec("k", "b", 20001), rec("k", "c", 20001),
                                 rec("k", "d", 10002)};
  std::vector<int> idx = {0, 1, 2, 3};
  std::optional<WriteRecord> first;
  Placement p{1, 1, 0};
  do {
    Replica r(0, p, kLww);
    for (int i : idx) {
      r.lww_merge(ws[i]);
      r.lww_merge(ws[i]);
    }
    if (!first) first = r.good().at("k");
    EXPECT_EQ(r.good().at("k"), *first);
  } while (std::next_permutation(idx.begin(), idx.end()));
  EXPECT_EQ(first->ts.encoded(), 20001u);
}

TEST(Replica, AntiEntropyPair) {
  Placement p{2, 1, 0};
  Replica a(0, p, kLww), b(1, p, kLww);
  a.lww_merge(rec("k", "a", 20001));
  b.lww_merge(rec("k", "b", 10001));
  EXPECT_EQ(a.anti_entropy_peers(), std::vector<NodeId>{1});
  auto ae = a.anti_entropy_step(1, false);
  Outbox out;
  EXPECT_TRUE(b.handle(0, ae, out));
  EXPECT_FALSE(a.handle(1, b.anti_entropy_step(0, true), out));
  EXPECT_EQ(a.good(), b.good());
  EXPECT_THROW(a.anti_entropy_step(0, true), RoutingError);
}

TEST(Replica, GossipFixpoint) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Placement p{5, 1, 0};
    std::vector<Replica> rs;
    for (NodeId n = 0; n < 5; ++n) rs.emplace_back(n, p, kLww);
    for (int i = 0; i < 30; ++i) {
      rs[rng.below(5)].lww_merge(rec("k" + std::to_string(rng.below(4)), "v" + std::to_string(i),
                                     make_timestamp(rng.below(9), 1 + rng.below(50)).encoded()));
    }
    // Reference: pointwise max over all replicas.
    std::map<Key, WriteRecord> expect;
    for (auto& r : rs) {
      for (auto& [k, w] : r.good()) {
        auto it = expect.find(k);
        if (it == expect.end() || std::tie(w.ts, w.value) > std::tie(it->second.ts, it->second.value)) expect[k] = w;
      }
    }
    for (int round = 0; round < 200; ++round) {
      NodeId a = static_cast<NodeId>(rng.below(5)), b = static_cast<NodeId>(rng.below(5));
      if (a == b) continue;
      Outbox out;
      rs[b].handle(a, rs[a].anti_entropy_step(b, true), out);
    }
    for (auto& r : rs) EXPECT_EQ(r.good(), expect);
  }
}

TEST(Replica, DependencyGatesReveal) {
  Placement p{1, 2, 0};
  Key x = key_on_shard(p, 0), y = key_on_shard(p, 1);
  NodeId nx = p.replica_in(x, 0), ny = p.replica_in(y, 0);
  Replica ry(ny, p, kStaged), rx(nx, p, kStaged);
  Outbox out;
  auto dep = Dependency{x, Timestamp::from_encoded(10001)};
  ry.apply_put(rec(y, "1", 20001, {y}, {dep}), false, out);
  EXPECT_EQ(*ry.expected(Timestamp::from_encoded(20001)), 2u);
  // Self notify arrives; dependency not yet acknowledged.
  ry.apply_notify(Timestamp::from_encoded(20001), y, ny, out);
  EXPECT_TRUE(ry.good().empty());
  auto q = std::find_if(out.begin(), out.end(), [](auto& m) { return std::holds_alternative<DepQuery>(m.second); });
  ASSERT_NE(q, out.end());
  EXPECT_EQ(q->first, nx);
  Outbox xo;
  rx.handle(ny, q->second, xo);
  EXPECT_TRUE(xo.empty());
  EXPECT_EQ(rx.parked_dep_queries(), 1u);
  rx.apply_put(rec(x, "1", 10001), false, xo);
  auto a = std::find_if(xo.begin(), xo.end(), [](auto& m) { return std::holds_alternative<DepAck>(m.second); });
  ASSERT_NE(a, xo.end());
  EXPECT_EQ(a->first, ny);
  Outbox yo;
  ry.handle(nx, a->second, yo);
  ASSERT_EQ(ry.good().count(y), 1u);
}

TEST(Replica, ClusterScope) {
  Placement p{2, 1, 0};
  ReplicaConfig cfg{StorageMode::staged, StabilityScope::cluster};
  Replica r(0, p, cfg);
  Outbox out;
  r.apply_put(rec("x", "1", 10001), false, out);
  EXPECT_EQ(*r.expected(Timestamp::from_encoded(10001)), 1u);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].first, 0u);
}

TEST(Replica, Predicate) {
  Placement p{1, 1, 0};
  Replica r(0, p, kStaged);
  Predicate all{"a", "z", std::nullopt};
  EXPECT_TRUE(r.serve_predicate(all, {}).records.empty());
  Outbox out;
  for (auto [k, ts] : {std::pair{"b", 10001}, {"c", 10002}, {"x", 10003}}) {
    r.apply_put(rec(k, "v", ts), false, out);
    r.apply_notify(Timestamp::from_encoded(ts), k, 0, out);
  }
  auto res = r.serve_predicate(all, {});
  ASSERT_EQ(res.records.size(), 3u);
  for (auto& w : res.records) EXPECT_EQ(w, *r.serve_get(w.key, std::nullopt).record);
  auto narrow = r.serve_predicate(Predicate{"c", "d", std::nullopt}, {});
  ASSERT_EQ(narrow.records.size(), 1u);
  EXPECT_EQ(narrow.records[0].key, "c");
  EXPECT_TRUE(r.serve_predicate(all, {{"q", Timestamp::from_encoded(50001)}}).parked);
}

TEST(Replica, MasterRegister) {
  Placement p{2, 1, 3};
  ReplicaConfig cfg{StorageMode::master, StabilityScope::global};
  Key k = "k1";
  NodeId m = p.master(k), other = 1 - m;
  Replica rm(m, p, cfg), ro(other, p, cfg);
  EXPECT_FALSE(rm.master_apply(Key(k)));
  rm.master_apply(rec(k, "v", 10001));
  EXPECT_EQ(rm.master_apply(Key(k))->value, "v");
  EXPECT_THROW(ro.master_apply(Key(k)), RoutingError);
  Outbox out;
  ro.handle(9, GetReq{1, 9, k, std::nullopt}, out);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].first, m);
  EXPECT_TRUE(std::holds_alternative<GetReq>(out[0].second));
}

TEST(Replica, MasterInterleavedLinearizable) {
  // Sequential replay: each read at the master returns the last write applied.
  Placement p{1, 1, 0};
  Replica r(0, p, ReplicaConfig{StorageMode::master, StabilityScope::global});
  Rng rng(4);
  std::optional<WriteRecord> last;
  for (std::uint64_t i = 1; i < 200; ++i) {
    if (rng.bernoulli(0.5)) {
      auto w = rec("k", std::to_string(i), make_timestamp(rng.below(5), i).encoded());
      r.master_apply(w);
      last = w;
    } else {
      EXPECT_EQ(r.master_apply(Key("k")), last);
    }
  }
}

TEST(Replica, GcPending) {
  Placement p{1, 1, 0};
  Replica r(0, p, kStaged);
  Outbox out;
  r.apply_put(rec("k", "a", 20001), false, out);
  r.apply_put(rec("k", "b", 30001), false, out);
  r.apply_notify(Timestamp::from_encoded(20001), "k", 0, out);
  // pending 30001 is newer than good; retained.
  EXPECT_EQ(r.gc_pending(), 0u);
  EXPECT_EQ(r.pending().at("k").size(), 1u);
  r.apply_put(rec("k", "c", 10001), false, out);
  EXPECT_EQ(r.pending().at("k").size(), 1u);  // collected on arrival
}

TEST(Replica, SiblingInvariantRandomSchedules) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    Fleet f(2, 2, kStaged);
    std::vector<Key> keys = {key_on_shard(f.placement, 0), key_on_shard(f.placement, 1),
                             key_on_shard(f.placement, 0, 1), key_on_shard(f.placement, 1, 1)};
    for (std::uint64_t t = 1; t <= 6; ++t) {
      std::vector<Key> sibs;
      for (auto& k : keys) {
        if (rng.bernoulli(0.5)) sibs.push_back(k);
      }
      if (sibs.empty()) sibs.push_back(keys[0]);
      std::sort(sibs.begin(), sibs.end());
      for (auto& k : sibs) {
        auto w = rec(k, "v", make_timestamp(t, 1).encoded(), sibs);
        f.put(w, f.placement.replica_in(k, static_cast<ClusterId>(rng.below(2))));
      }
      if (rng.bernoulli(0.3)) f.drain_random(rng, [&] { ASSERT_TRUE(sibling_invariant(f)); });
    }
    f.drain_random(rng, [&] { ASSERT_TRUE(sibling_invariant(f)); });
    for (auto& r : f.replicas) EXPECT_TRUE(r.pending().empty());
    for (auto& k : keys) {
      auto rs = f.placement.replicas(k);
      const auto& g0 = f.replicas[rs[0]].good();
      const auto& g1 = f.replicas[rs[1]].good();
      ASSERT_EQ(g0.count(k), g1.count(k));
      if (g0.count(k)) EXPECT_EQ(g0.at(k), g1.at(k));
    }
  }
}

TEST(Replica, DuplicateDeliveryIdempotent) {
  Fleet f(2, 1, kStaged);
  auto w = rec("x", "1", 10001, {"x"});
  f.put(w, 0);
  auto copy = f.pool;
  for (auto& m : copy) f.pool.push_back(m);
  f.drain();
  for (auto& r : f.replicas) {
    EXPECT_EQ(r.good().at("x"), w);
    EXPECT_TRUE(r.pending().empty());
  }
}
