#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hatkv/checker.hpp"
#include "hatkv/core.hpp"
#include "hatkv/replica.hpp"
#include "hatkv/simnet.hpp"
#include "hatkv/txclient.hpp"

namespace hatkv {

struct WorkloadSpec {
  std::size_t key_count = 100000;
  std::size_t value_size = 1024;
  std::size_t txn_len = 8;
  double read_fraction = 0.5;
  double scan_fraction = 0.0;   // share of reads issued as range scans
  std::size_t scan_width = 8;   // keys per scanned range
  double abort_fraction = 0.0;  // application-requested aborts
  std::size_t clients = 8;
  std::size_t duration_txns = 1000;

  void validate() const;
};

struct PlannedOp {
  enum class Kind { read, write, scan };
  Kind kind = Kind::read;
  Key key;    // scan: range start
  Value value;
  Key hi;     // scan: range end
};

struct TxnPlan {
  std::size_t client = 0;
  double start_ms = 0;  // earliest start; txns of one client run in order
  std::vector<PlannedOp> ops;
  bool abort = false;
};

/// Zero-padded so key order matches index order.
Key key_name(std::size_t index, std::size_t key_count);

/// Transactions dealt round-robin to clients.
std::vector<TxnPlan> gen_workload(const WorkloadSpec& spec, std::uint64_t seed);

enum class CheckLevel { none, prohibited, all };

struct RunConfig {
  std::uint64_t seed = 1;
  Isolation isolation = Isolation::rc;
  CutIsolation cut = CutIsolation::none;
  SessionGuarantees sessions;
  std::size_t clusters = 2;
  std::size_t servers = 2;
  WorkloadSpec workload;
  std::optional<RttMatrix> rtt;  // default: bundled EC2 table, first `clusters` regions
  double rtt_scale = 1.0;
  double jitter = 0.1;
  std::size_t durability = 0;    // F
  std::vector<ScenarioAction> scenario;
  std::vector<TxnPlan> script;   // replaces the generated workload when non-empty
  /// Chance that a non-sticky request ignores the home replica.
  double roam = 0.0;
  double op_timeout_ms = 2000;
  std::size_t retry_budget = 4;
  double backoff_ms = 20;
  double backoff_cap_ms = 500;
  double ae_interval_ms = 200;
  bool duplicate_delivery = false;
  bool audit = true;
  CheckLevel check = CheckLevel::none;

  void validate() const;
  ReplicaConfig replica_config() const { return replica_config_for(isolation, sessions); }
};

/// Phenomena the configured mode promises to exclude.
std::vector<Phenomenon> prohibited_for(Isolation iso, CutIsolation cut, const SessionGuarantees& s);

struct RunMetrics {
  std::uint64_t issued = 0;
  std::uint64_t committed = 0;
  std::uint64_t internal_aborts = 0;
  std::uint64_t external_aborts = 0;
  std::uint64_t ops = 0;          // client requests that crossed the network
  double op_latency_mean_ms = 0;
  double op_latency_p99_ms = 0;
  std::uint64_t remote_ops = 0;   // first target outside the client's cluster
  double remote_op_latency_mean_ms = 0;
  double txn_latency_mean_ms = 0;
  std::uint64_t messages = 0;
  std::uint64_t cross_cluster_messages = 0;
  std::map<std::string, std::uint64_t> messages_by_kind;
  std::uint64_t writes_shipped = 0;
  double metadata_bytes_mean = 0;
  std::uint64_t audit_checks = 0;  // a violation aborts the run instead
  std::uint64_t keys_checked = 0;
  std::uint64_t keys_diverged = 0;
  std::uint64_t stuck = 0;  // parked requests or pending records left after quiescence
  std::uint64_t findings = 0;
  std::uint64_t prohibited_findings = 0;
  std::map<std::string, std::uint64_t> findings_by_phenomenon;
  double sim_ms = 0;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

struct RunResult {
  History history;
  RunMetrics metrics;
  std::vector<Finding> findings;  // filled per RunConfig::check
};

/// Protocol invariant broken during a run; carries the tail of the trace.
class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunResult run_scenario(const RunConfig& cfg);

std::string csv_header();
std::string csv_row(const RunConfig& cfg, const RunMetrics& m);
std::string summary_text(const RunConfig& cfg, const RunMetrics& m);

/// Scenario tokens: a cluster name (all its servers and homed clients),
/// `s<i>` for server i, `c<i>` for client i. Explicit nodes win over clusters.
std::vector<std::vector<NodeId>> resolve_groups(const ScenarioAction& a, const RunConfig& cfg);

struct DemoReport {
  History history;
  std::vector<Finding> findings;
  RunMetrics metrics;
};

/// Two clients on opposite sides of a partition both read x then overwrite it.
DemoReport demo_lost_update(Isolation iso, bool partition, std::uint64_t seed = 1);
/// A client writes at its home cluster, then a partition strands it with the
/// other cluster before it reads its write back.
DemoReport demo_ryw(bool sticky, std::uint64_t seed = 1);

enum class Crafted { otv, imp, pmp };
/// Hand-ordered message schedules against live replicas and clients.
History crafted_schedule(Crafted kind, Isolation iso, CutIsolation cut);

/// Seed sweeps: one run per seed, identical output in either variant.
std::vector<RunMetrics> sweep_serial(const RunConfig& base, const std::vector<std::uint64_t>& seeds);
std::vector<RunMetrics> sweep_parallel(const RunConfig& base, const std::vector<std::uint64_t>& seeds);
std::vector<std::vector<Finding>> check_batch_serial(const std::vector<History>& hs,
                                                     const std::vector<Phenomenon>& ps);
std::vector<std::vector<Finding>> check_batch_parallel(const std::vector<History>& hs,
                                                       const std::vector<Phenomenon>& ps);

}  // namespace hatkv
