#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hatkv/core.hpp"

namespace hatkv {

class MalformedHistory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phenomenon { G0, G1a, G1b, G1c, IMP, PMP, OTV, N_MR, N_MW, MRWD, MYR, LostUpdate, WriteSkew };

inline constexpr std::array kAllPhenomena = {
    Phenomenon::G0,  Phenomenon::G1a,  Phenomenon::G1b,  Phenomenon::G1c,  Phenomenon::IMP,
    Phenomenon::PMP, Phenomenon::OTV,  Phenomenon::N_MR, Phenomenon::N_MW, Phenomenon::MRWD,
    Phenomenon::MYR, Phenomenon::LostUpdate, Phenomenon::WriteSkew};

std::string_view name(Phenomenon p);
std::optional<Phenomenon> parse_phenomenon(std::string_view s);
/// "all" or a comma-separated list of names.
std::vector<Phenomenon> parse_phenomena(std::string_view list);

struct Finding {
  Phenomenon what = Phenomenon::G0;
  std::vector<Timestamp> txns;  // cycle order for cycle phenomena
  std::vector<Key> items;
  friend auto operator<=>(const Finding&, const Finding&) = default;
};

/// `<phenomenon>\t<txns comma-sep>\t<items comma-sep>`
std::string format_finding(const Finding& f);

/// Per key, committed installs in version (= timestamp) order.
struct VersionOrder {
  std::map<Key, std::vector<Timestamp>> order;
};

enum class EdgeType { ww, wr, rw, pred_wr, pred_rw, session };
std::string_view to_string(EdgeType t);

struct DsgEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  EdgeType type = EdgeType::ww;
  std::string label;  // item, predicate range, or session id
  friend auto operator<=>(const DsgEdge&, const DsgEdge&) = default;
};

struct Dsg {
  std::vector<Timestamp> nodes;  // committed transactions, ascending
  std::vector<DsgEdge> edges;    // sorted, unique
  std::optional<std::size_t> index_of(Timestamp t) const;
};

/// The DSG with one transaction split into its operations.
struct Usg {
  struct Node {
    Timestamp txn;
    std::optional<std::size_t> op;  // set for the split transaction
  };
  struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    std::optional<EdgeType> type;  // nullopt: order edge
    std::string label;
  };
  Timestamp txn;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::size_t order_edges() const;
  bool has_cycle() const;
};

VersionOrder build_version_order(const History& h);
Dsg build_dsg(const History& h, const VersionOrder& vo);
Usg build_usg(const Dsg& dsg, const History& h, Timestamp txn);

/// Runs the detectors over one immutable history.
class Checker {
 public:
  explicit Checker(const History& h);

  const VersionOrder& version_order() const noexcept { return vo_; }
  const Dsg& dsg() const noexcept { return dsg_; }

  std::vector<Finding> detect(Phenomenon p) const;
  std::vector<Finding> detect(const std::vector<Phenomenon>& ps) const;

  struct Op {
    EventKind kind = EventKind::read;
    Key key;
    std::optional<Value> value;
    VersionId version;
    Predicate pred;
    std::vector<VsetEntry> vset;
  };
  struct Txn {
    Timestamp ts;
    std::optional<std::string> session;
    bool committed = false;
    std::vector<Op> ops;
    std::map<Key, std::size_t> final_write;  // op index
  };
  const std::map<Timestamp, Txn>& txns() const noexcept { return txns_; }

 private:
  std::vector<Finding> dirty_reads(bool want_aborted) const;
  std::vector<Finding> cycles(Phenomenon p) const;
  std::vector<Finding> item_anti_cycles(bool lost_update) const;
  std::vector<Finding> imp() const;
  std::vector<Finding> pmp() const;
  std::vector<Finding> otv() const;
  std::vector<Finding> n_mr() const;
  std::vector<Finding> n_mw() const;
  std::vector<Finding> mrwd() const;
  std::vector<Finding> myr() const;

  bool is_committed(Timestamp t) const;
  /// Committed install of (key, ts), with the installer's final value.
  const Value* installed(const Key& k, Timestamp ts) const;
  std::vector<Timestamp> changers(const Predicate& p, const Key& k, VersionId upto, bool after) const;

  std::map<Timestamp, Txn> txns_;
  VersionOrder vo_;
  Dsg dsg_;
};

std::vector<Finding> detect(const History& h, Phenomenon p);

enum class Level {
  read_uncommitted,
  read_committed,
  monotonic_atomic_view,
  item_cut_isolation,
  predicate_cut_isolation,
  monotonic_reads,
  monotonic_writes,
  writes_follow_reads,
  read_your_writes,
  causal_sessions,
  repeatable_read,
};

inline constexpr std::array kAllLevels = {
    Level::read_uncommitted,   Level::read_committed,     Level::monotonic_atomic_view, Level::item_cut_isolation,
    Level::predicate_cut_isolation, Level::monotonic_reads, Level::monotonic_writes,   Level::writes_follow_reads,
    Level::read_your_writes,   Level::causal_sessions,    Level::repeatable_read};

std::string_view name(Level l);
std::vector<Phenomenon> prohibited_by(Level l);

/// JSON object: counts per checked phenomenon and the levels the history satisfies.
std::string summary_json(const std::vector<Finding>& findings, const std::vector<Phenomenon>& checked);

/// Brute force over serial orders; refuses more than 6 committed
/// transactions, 4 keys, or any predicate read.
bool serializability_oracle(const History& h);

}  // namespace hatkv
