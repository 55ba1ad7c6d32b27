#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace hatkv {

using NodeId = std::uint32_t;
using ClusterId = std::uint32_t;
/// Simulated time in nanoseconds.
using SimTime = std::int64_t;

constexpr SimTime kMillisecond = 1'000'000;

inline SimTime ms_to_sim(double ms) { return static_cast<SimTime>(ms * 1e6 + (ms >= 0 ? 0.5 : -0.5)); }
inline double sim_to_ms(SimTime t) { return static_cast<double>(t) / 1e6; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Symmetric cluster-to-cluster mean RTT table, milliseconds.
class RttMatrix {
 public:
  RttMatrix() = default;
  RttMatrix(std::vector<std::string> names, std::vector<double> rtt_ms);

  /// Header row of names, then one row per cluster: name followed by RTTs.
  /// Upper-triangular rows are accepted and mirrored.
  static RttMatrix parse(const std::string& text);
  static RttMatrix load(const std::string& path);
  /// Cross-region EC2 means (CA, OR, VA, TO, IR, SY, SP, SI) with the
  /// intra-AZ 0.55 ms on the diagonal.
  static RttMatrix ec2_default();
  static constexpr double kIntraClusterRttMs = 0.55;

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<std::size_t> index_of(const std::string& name) const;
  double rtt_ms(std::size_t a, std::size_t b) const { return rtt_[a * names_.size() + b]; }

  /// Sub-matrix restricted to the named clusters, in the given order.
  RttMatrix select(const std::vector<std::string>& names) const;
  RttMatrix scaled(double factor) const;
  std::string to_text() const;

 private:
  std::vector<std::string> names_;
  std::vector<double> rtt_;
};

/// Deterministic uniform helpers on top of a 64-bit Mersenne twister; the
/// standard distributions are not reproducible across library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? engine_() % n : 0; }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct Topology {
  std::vector<std::string> cluster_names;
  std::vector<ClusterId> node_cluster;  // indexed by NodeId
  RttMatrix rtt;                        // over cluster_names; diagonal is intra-cluster

  std::size_t node_count() const noexcept { return node_cluster.size(); }
  /// One-way latency before jitter.
  SimTime base_one_way(NodeId a, NodeId b) const;
};

struct TimerFire {
  std::uint64_t kind = 0;
  std::uint64_t id = 0;
};

/// Scenario actions, times in milliseconds from run start.
struct ScenarioAction {
  enum class Kind { partition, heal, stop };
  double at_ms = 0;
  Kind kind = Kind::heal;
  std::vector<std::vector<std::string>> groups;  // node or cluster tokens
};

std::vector<ScenarioAction> parse_scenario(const std::string& text);
std::vector<ScenarioAction> load_scenario(const std::string& path);

/// Discrete-event network. Messages between nodes separated by an active
/// partition are parked (at send or at delivery) and re-sent on heal.
template <typename Msg>
class Network {
 public:
  struct Event {
    SimTime at = 0;
    std::uint64_t seq = 0;
    NodeId src = 0;
    NodeId dst = 0;
    std::variant<Msg, TimerFire> body;
  };

  Network(Topology topo, std::uint64_t seed, double jitter = 0.0, bool duplicate_delivery = false)
      : topo_(std::move(topo)), rng_(mix_seed(seed, 0x6e6574)), jitter_(jitter),
        duplicates_(duplicate_delivery), group_(topo_.node_count(), 0) {}

  SimTime now() const noexcept { return now_; }
  const Topology& topology() const noexcept { return topo_; }
  bool partitioned() const noexcept { return partitioned_; }

  bool reachable(NodeId a, NodeId b) const {
    check_node(a);
    check_node(b);
    return !partitioned_ || group_[a] == group_[b];
  }

  SimTime one_way(NodeId src, NodeId dst) {
    SimTime base = topo_.base_one_way(src, dst);
    if (jitter_ == 0.0 || base == 0) return base;
    double u = 2.0 * rng_.uniform() - 1.0;
    return std::max<SimTime>(0, static_cast<SimTime>(static_cast<double>(base) * (1.0 + jitter_ * u)));
  }

  void send(NodeId src, NodeId dst, Msg msg) {
    check_node(src);
    check_node(dst);
    ++sent_;
    if (topo_.node_cluster[src] != topo_.node_cluster[dst]) ++cross_cluster_sent_;
    if (duplicates_ && src != dst) enqueue(src, dst, msg);
    enqueue(src, dst, std::move(msg));
  }

  void schedule_timer(NodeId node, SimTime delay, TimerFire t) {
    check_node(node);
    push(Event{now_ + delay, next_seq_++, node, node, t});
  }

  /// groups must be disjoint and cover every node.
  void partition(const std::vector<std::vector<NodeId>>& groups) {
    std::vector<int> seen(topo_.node_count(), -1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (NodeId n : groups[g]) {
        check_node(n);
        if (seen[n] != -1) throw ConfigError("partition groups overlap at node " + std::to_string(n));
        seen[n] = static_cast<int>(g);
      }
    }
    for (std::size_t n = 0; n < seen.size(); ++n) {
      if (seen[n] == -1) throw ConfigError("partition groups do not cover node " + std::to_string(n));
    }
    if (partitioned_) heal();
    for (std::size_t n = 0; n < seen.size(); ++n) group_[n] = static_cast<std::size_t>(seen[n]);
    partitioned_ = true;
  }

  /// Releases parked messages in park order with fresh latency from now.
  void heal() {
    partitioned_ = false;
    std::fill(group_.begin(), group_.end(), 0);
    auto parked = std::move(parked_);
    parked_.clear();
    for (auto& p : parked) enqueue(p.src, p.dst, std::move(p.msg));
  }

  /// Next deliverable event; parks cross-partition messages on the way.
  std::optional<Event> pop() {
    while (!queue_.empty()) {
      std::pop_heap(queue_.begin(), queue_.end(), Later{});
      Event ev = std::move(queue_.back());
      queue_.pop_back();
      now_ = std::max(now_, ev.at);
      if (auto* m = std::get_if<Msg>(&ev.body); m && !reachable(ev.src, ev.dst)) {
        parked_.push_back(Parked{ev.src, ev.dst, std::move(*m)});
        continue;
      }
      return ev;
    }
    return std::nullopt;
  }

  bool idle() const noexcept { return queue_.empty(); }
  std::size_t parked_count() const noexcept { return parked_.size(); }
  std::uint64_t messages_sent() const noexcept { return sent_; }
  std::uint64_t cross_cluster_sent() const noexcept { return cross_cluster_sent_; }

  /// Drains the queue, then injects full rounds via start_round until a round
  /// produces no state change. handle(event) returns true on state change.
  template <typename Handle, typename Round>
  SimTime run_until_quiescent(Handle&& handle, Round&& start_round, std::size_t max_rounds = 64,
                              std::size_t max_events = 50'000'000) {
    if (partitioned_) throw ConfigError("run_until_quiescent requires healed network");
    std::size_t events = 0;
    auto drain = [&] {
      bool changed = false;
      while (auto ev = pop()) {
        if (++events > max_events) throw DivergenceError("event bound exceeded before quiescence");
        changed = handle(*ev) || changed;
      }
      return changed;
    };
    drain();
    for (std::size_t round = 0; round < max_rounds; ++round) {
      start_round();
      if (!drain()) return now_;
    }
    throw DivergenceError("no anti-entropy fixpoint after " + std::to_string(max_rounds) + " rounds");
  }

 private:
  struct Parked {
    NodeId src;
    NodeId dst;
    Msg msg;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  void check_node(NodeId n) const {
    if (n >= topo_.node_count()) throw ConfigError("unknown node " + std::to_string(n));
  }

  void enqueue(NodeId src, NodeId dst, Msg msg) {
    if (!reachable(src, dst)) {
      parked_.push_back(Parked{src, dst, std::move(msg)});
      return;
    }
    push(Event{now_ + one_way(src, dst), next_seq_++, src, dst, std::move(msg)});
  }

  void push(Event ev) {
    queue_.push_back(std::move(ev));
    std::push_heap(queue_.begin(), queue_.end(), Later{});
  }

  Topology topo_;
  Rng rng_;
  double jitter_;
  bool duplicates_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t cross_cluster_sent_ = 0;
  bool partitioned_ = false;
  std::vector<std::size_t> group_;
  std::vector<Parked> parked_;
  std::vector<Event> queue_;  // min-heap on (at, seq)
};

}  // namespace hatkv
