#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hatkv/core.hpp"
#include "hatkv/replica.hpp"
#include "hatkv/simnet.hpp"

namespace hatkv {

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Isolation { ru, rc, mav, master };
enum class CutIsolation { none, item, predicate };

Isolation parse_isolation(std::string_view s);
CutIsolation parse_cut(std::string_view s);
std::string_view to_string(Isolation i);
std::string_view to_string(CutIsolation c);

struct SessionGuarantees {
  bool mr = false;
  bool mw = false;
  bool wfr = false;
  bool ryw = false;
  bool sticky = false;

  bool any() const noexcept { return mr || mw || wfr || ryw; }
  /// Comma-separated subset of mr, mw, wfr, ryw-sticky, causal-sticky; "" or "none" for nothing.
  static SessionGuarantees parse(std::string_view list);
  std::string to_string() const;
};

/// Storage behaviour the servers need for a client mode.
ReplicaConfig replica_config_for(Isolation iso, const SessionGuarantees& s);

struct ClientConfig {
  std::uint32_t client_id = 0;
  NodeId node = 0;
  ClusterId home_cluster = 0;  // also the sticky cluster
  Isolation isolation = Isolation::rc;
  CutIsolation cut = CutIsolation::none;
  SessionGuarantees sessions;
  std::optional<std::string> session_id;
  std::size_t durability = 0;  // F: commit waits for F+1 replica receipts per write
  std::uint64_t seed = 0;
};

struct ReadResult {
  std::optional<Value> value;  // nullopt: bottom
  VersionId version;
};

struct ScanResult {
  std::vector<Key> matches;
  std::vector<VsetEntry> vset;
};

enum class TxnOutcome { committed, internal_abort, external_abort };

using Reachable = std::function<bool(NodeId)>;

/// Transaction client state machine. It never touches the network: the
/// caller ships the requests it builds and feeds the responses back.
class TxClient {
 public:
  TxClient(ClientConfig cfg, Placement placement);

  const ClientConfig& config() const noexcept { return cfg_; }
  bool in_txn() const noexcept { return open_; }
  /// Provisional until prepare_commit (RU: fixed at begin).
  Timestamp current() const noexcept { return ts_; }

  Timestamp begin(SimTime now);

  /// RU returns the record to send right away; other modes buffer.
  std::optional<WriteRecord> put(const Key& k, Value v, SimTime now);

  /// Write buffer or cut cache hit.
  std::optional<ReadResult> get_local(const Key& k, SimTime now);
  GetReq get_request(const Key& k, std::uint64_t req_id) const;
  ReadResult on_get(const GetResp& resp, SimTime now);

  /// Predicate-cut hit on an identical range.
  std::optional<ScanResult> scan_local(const Predicate& p, SimTime now);
  /// One request per shard: (shard, request).
  std::vector<std::pair<std::size_t, PredReq>> scan_requests(const Predicate& p, std::uint64_t req_id_base) const;
  ScanResult on_scan(const Predicate& p, const std::vector<PredResp>& resps, SimTime now);

  NodeId choose_replica(const Key& k, const Reachable& reachable, std::size_t attempt = 0);
  NodeId choose_shard_replica(std::size_t shard, const Reachable& reachable, std::size_t attempt = 0);

  /// Fixes the commit timestamp and returns the writes to ship (RU: none).
  std::vector<WriteRecord> prepare_commit();
  /// Distinct replicas for one write, acks_needed() of them.
  std::vector<NodeId> commit_targets(const Key& k, const Reachable& reachable, std::size_t attempt);
  std::size_t acks_needed() const noexcept;

  void finish(TxnOutcome outcome, SimTime now);
  /// Events of the last finished transaction, txn field final.
  std::vector<HistoryEvent> take_events();

  const std::map<Key, Timestamp>& required() const noexcept { return required_; }
  const std::map<Key, Timestamp>& session_required() const noexcept { return session_required_; }
  const std::map<Key, Timestamp>& session_deps() const noexcept { return session_deps_; }

 private:
  void require_open(const char* op) const;
  bool staged() const noexcept;
  void observe(const WriteRecord& w);
  VersionId bound_for(const Key& k) const;
  void record(EventKind kind, SimTime now, std::optional<Key> key = {}, std::optional<Value> value = {},
              std::optional<VersionId> version = {}, std::vector<VsetEntry> vset = {});
  Timestamp next_ts();
  void fix_timestamp();
  std::optional<ReadResult> cached_in_ranges(const Key& k) const;
  NodeId pick(std::size_t shard, const Reachable& reachable, std::size_t attempt);

  ClientConfig cfg_;
  Placement placement_;
  Rng rng_;

  bool open_ = false;
  bool has_writes_ = false;
  bool fixed_ = false;
  Timestamp ts_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t max_seen_seq_ = 0;

  std::map<Key, Value> write_buffer_;
  std::map<Key, Timestamp> required_;
  std::map<Key, ReadResult> read_cache_;
  std::map<std::pair<Key, Key>, std::map<Key, ReadResult>> pred_cache_;
  std::map<Key, Timestamp> txn_reads_;  // highest version read per key this txn
  std::map<Key, Timestamp> txn_observed_;  // wfr: siblings of everything read

  std::map<Key, Timestamp> session_required_;
  std::map<Key, Timestamp> session_deps_;

  std::vector<HistoryEvent> events_;
  std::vector<HistoryEvent> finished_;
};

}  // namespace hatkv
