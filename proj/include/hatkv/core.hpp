#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hatkv {

using Key = std::string;
/// Opaque value bytes. Never interpreted by the store.
using Value = std::string;

class EncodingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Globally unique transaction identifier packed as seq * 10000 + client.
class Timestamp {
 public:
  static constexpr std::uint64_t kClientSpace = 10000;

  constexpr Timestamp() = default;

  static Timestamp make(std::uint64_t client, std::uint64_t seq);
  static constexpr Timestamp from_encoded(std::uint64_t encoded) { return Timestamp(encoded); }

  constexpr std::uint64_t encoded() const noexcept { return encoded_; }
  constexpr std::uint64_t client() const noexcept { return encoded_ % kClientSpace; }
  constexpr std::uint64_t seq() const noexcept { return encoded_ / kClientSpace; }

  friend constexpr auto operator<=>(Timestamp, Timestamp) = default;

 private:
  constexpr explicit Timestamp(std::uint64_t encoded) : encoded_(encoded) {}
  std::uint64_t encoded_ = 0;
};

Timestamp make_timestamp(std::uint64_t client, std::uint64_t seq);

enum class Order { less, equal, greater };
Order ts_order(Timestamp a, Timestamp b) noexcept;

/// Identity of an installed version; nullopt is the initial (bottom) version.
using VersionId = std::optional<Timestamp>;

/// Bottom orders before every installed version.
bool version_less(const VersionId& a, const VersionId& b) noexcept;

struct Dependency {
  Key key;
  Timestamp ts;
  friend auto operator<=>(const Dependency&, const Dependency&) = default;
};

/// Unit of replication. All writes of one transaction share ts and sibs.
struct WriteRecord {
  Key key;
  Value value;
  Timestamp ts;
  std::vector<Key> sibs;          // sorted, contains key
  std::vector<Dependency> deps;   // session dependencies, sorted

  friend bool operator==(const WriteRecord&, const WriteRecord&) = default;
};

/// Serialized metadata size carried by a write beyond key and value.
std::size_t metadata_bytes(const WriteRecord& w);

/// Key range [lo, hi) plus an optional equality test on the value.
struct Predicate {
  Key lo;
  Key hi;
  std::optional<Value> equals;

  bool in_range(const Key& k) const noexcept { return lo <= k && k < hi; }
  /// Bottom (absent) never matches.
  bool matches(const std::optional<Value>& v) const noexcept;
  bool overlaps(const Predicate& other) const noexcept;
  std::string range_text() const;

  friend auto operator<=>(const Predicate&, const Predicate&) = default;
};

enum class EventKind { begin, read, write, pred_read, commit, abort };

std::string_view to_string(EventKind k);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct VsetEntry {
  Key key;
  VersionId version;
  friend bool operator==(const VsetEntry&, const VsetEntry&) = default;
};

struct HistoryEvent {
  std::uint64_t seq_no = 0;
  std::int64_t sim_time = 0;
  std::optional<std::string> session;
  Timestamp txn;
  EventKind kind = EventKind::begin;
  std::optional<Key> key;                   // pred_read: the range, "lo~hi"
  std::optional<Value> value;               // pred_read: equality constant
  std::optional<VersionId> version;         // read: observed; write: write ts
  std::vector<VsetEntry> vset;
  std::string reserved = "-";               // abort: "internal" or "external"

  friend bool operator==(const HistoryEvent&, const HistoryEvent&) = default;
};

using History = std::vector<HistoryEvent>;

std::string encode_event(const HistoryEvent& e);
HistoryEvent decode_event(std::string_view line, std::size_t line_no = 1);

std::string encode_history(const History& h);
History decode_history(std::string_view text);

void write_history_file(const std::string& path, const History& h);
History read_history_file(const std::string& path);

std::string to_hex(std::string_view bytes);
std::string from_hex(std::string_view hex);

/// Keys are restricted so that they never collide with log separators.
bool valid_key(std::string_view k) noexcept;

Predicate parse_predicate_range(std::string_view text);

/// Session id -> committed transactions in commit order.
using SessionOrder = std::map<std::string, std::vector<Timestamp>>;
SessionOrder session_order(const History& h);

}  // namespace hatkv
