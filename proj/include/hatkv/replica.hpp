#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string_view>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "hatkv/core.hpp"
#include "hatkv/simnet.hpp"

namespace hatkv {

class RoutingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hash partitioning inside each cluster; every cluster holds a full copy.
/// Servers occupy NodeIds [0, clusters * servers_per_cluster).
struct Placement {
  std::size_t clusters = 1;
  std::size_t servers_per_cluster = 1;
  std::uint64_t master_seed = 0;

  std::size_t server_count() const noexcept { return clusters * servers_per_cluster; }
  bool is_server(NodeId n) const noexcept { return n < server_count(); }
  NodeId server(ClusterId c, std::size_t shard) const noexcept {
    return static_cast<NodeId>(c * servers_per_cluster + shard);
  }
  ClusterId cluster_of_server(NodeId n) const noexcept {
    return static_cast<ClusterId>(n / servers_per_cluster);
  }
  std::size_t shard_of_server(NodeId n) const noexcept { return n % servers_per_cluster; }

  std::size_t shard_of(const Key& k) const noexcept;
  NodeId replica_in(const Key& k, ClusterId c) const noexcept { return server(c, shard_of(k)); }
  std::vector<NodeId> replicas(const Key& k) const;
  bool is_replica(NodeId n, const Key& k) const noexcept {
    return is_server(n) && shard_of_server(n) == shard_of(k);
  }
  /// Randomly designated (seeded) master cluster per key.
  ClusterId master_cluster(const Key& k) const noexcept;
  NodeId master(const Key& k) const noexcept { return replica_in(k, master_cluster(k)); }
};

// Messages. Requests carry reply_to so a non-master can forward them intact.
struct WritePut {
  std::uint64_t req_id = 0;
  NodeId reply_to = 0;
  WriteRecord record;
  bool from_client = true;
};
struct WriteAck {
  std::uint64_t req_id = 0;
  Key key;
};
struct Notify {
  Timestamp ts;
  Key sib;
};
struct DepQuery {
  Timestamp waiting;
  Dependency dep;
};
struct DepAck {
  Timestamp waiting;
  Key dep_key;
};
struct AntiEntropy {
  std::vector<WriteRecord> records;
};
struct GetReq {
  std::uint64_t req_id = 0;
  NodeId reply_to = 0;
  Key key;
  VersionId required;
};
struct GetResp {
  std::uint64_t req_id = 0;
  Key key;
  std::optional<WriteRecord> record;  // nullopt: bottom
};
struct PredReq {
  std::uint64_t req_id = 0;
  NodeId reply_to = 0;
  Predicate pred;
  std::map<Key, Timestamp> required;
};
struct PredResp {
  std::uint64_t req_id = 0;
  std::vector<WriteRecord> records;
};

using Message = std::variant<WritePut, WriteAck, Notify, DepQuery, DepAck, AntiEntropy, GetReq, GetResp,
                             PredReq, PredResp>;

std::string_view message_kind(const Message& m);

enum class StorageMode {
  lww,     // last-writer-wins register (eventual / RU / RC)
  staged,  // pending + good sets, reveal on stability
  master,  // single designated master per key
};

/// Which replicas must hold a write's siblings and dependencies before it is
/// revealed: every replica, or only those in the receiving replica's cluster.
enum class StabilityScope { global, cluster };

struct ReplicaConfig {
  StorageMode mode = StorageMode::lww;
  StabilityScope scope = StabilityScope::global;
};

struct GetResult {
  bool parked = false;
  std::optional<WriteRecord> record;  // nullopt with !parked: bottom
};

struct PredicateResult {
  bool parked = false;
  std::vector<WriteRecord> records;
};

using Outbox = std::vector<std::pair<NodeId, Message>>;

class Replica {
 public:
  struct Hooks {
    /// A record entered good.
    std::function<void(NodeId, const WriteRecord&)> on_good;
    /// A record left pending (promoted, superseded, or collected).
    std::function<void(NodeId, const Key&, Timestamp)> on_pending_drop;
  };

  Replica(NodeId self, const Placement& placement, ReplicaConfig config);

  NodeId id() const noexcept { return self_; }
  const ReplicaConfig& config() const noexcept { return config_; }
  void set_hooks(Hooks h) { hooks_ = std::move(h); }

  /// Dispatch; returns true if replicated state changed.
  bool handle(NodeId src, const Message& msg, Outbox& out);

  bool apply_put(const WriteRecord& w, bool from_client, Outbox& out);
  bool apply_notify(Timestamp ts, const Key& sib, NodeId src, Outbox& out);
  bool apply_dep_ack(Timestamp ts, const Key& dep_key, NodeId src, Outbox& out);
  GetResult serve_get(const Key& key, const VersionId& required) const;
  PredicateResult serve_predicate(const Predicate& p, const std::map<Key, Timestamp>& required) const;
  bool lww_merge(const WriteRecord& w);
  /// Good records for keys changed since the last round (or all of them).
  AntiEntropy anti_entropy_step(NodeId peer, bool full);
  std::vector<NodeId> anti_entropy_peers() const;
  void anti_entropy_round(bool full, Outbox& out);
  bool has_dirty() const noexcept { return !dirty_.empty(); }
  /// True once every sibling and dependency of ts is held by its replicas in scope.
  bool reveal_gate(Timestamp ts) const;
  std::size_t gc_pending();

  /// Master-mode register: reads return the latest installed write, writes
  /// install immediately.
  using MasterOp = std::variant<Key, WriteRecord>;
  std::optional<WriteRecord> master_apply(const MasterOp& op);

  /// Does this replica hold (key, ts) or something newer in good.
  bool holds(const Key& key, Timestamp ts) const;

  const std::map<Key, WriteRecord>& good() const noexcept { return good_; }
  const std::map<Key, std::map<Timestamp, WriteRecord>>& pending() const noexcept { return pending_; }
  std::size_t acks(Timestamp ts) const;
  std::optional<std::size_t> expected(Timestamp ts) const;
  std::size_t parked_requests() const noexcept { return parked_gets_.size() + parked_preds_.size(); }
  std::size_t parked_dep_queries() const noexcept;

 private:
  using AckKey = std::tuple<bool, Key, NodeId>;  // (is_dep, key, sender)

  std::vector<NodeId> scope_replicas(const Key& k) const;
  std::size_t expected_for(const WriteRecord& w) const;
  void try_promote(Timestamp ts, Outbox& out);
  bool install_good(const WriteRecord& w);
  void drop_pending(const Key& k, Timestamp ts);
  std::size_t gc_key(const Key& k);
  /// Retry parked requests and dependency queries that key may now satisfy.
  void after_change(const Key& key, Outbox& out);
  void require_replica(const Key& k) const;

  NodeId self_;
  Placement placement_;
  ReplicaConfig config_;
  Hooks hooks_;

  std::map<Key, WriteRecord> good_;
  std::map<Key, std::map<Timestamp, WriteRecord>> pending_;
  std::map<Timestamp, std::set<Key>> pending_by_ts_;
  std::map<Timestamp, std::set<AckKey>> acks_;
  std::map<Timestamp, std::size_t> expected_;
  std::set<Timestamp> stable_;
  std::set<std::pair<Key, Timestamp>> received_;
  std::set<Key> dirty_;

  std::vector<std::pair<NodeId, GetReq>> parked_gets_;
  std::vector<std::pair<NodeId, PredReq>> parked_preds_;
  std::map<Key, std::vector<std::pair<NodeId, DepQuery>>> parked_deps_;
};

}  // namespace hatkv
