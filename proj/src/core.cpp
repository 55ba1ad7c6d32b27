#include "hatkv/core.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace hatkv {

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

Timestamp Timestamp::make(std::uint64_t client, std::uint64_t seq) {
  if (client >= kClientSpace) {
    throw EncodingError("client id " + std::to_string(client) + " exceeds timestamp client space");
  }
  if (seq > (UINT64_MAX - client) / kClientSpace) {
    throw EncodingError("sequence number overflows timestamp encoding");
  }
  return Timestamp(seq * kClientSpace + client);
}

Timestamp make_timestamp(std::uint64_t client, std::uint64_t seq) { return Timestamp::make(client, seq); }

Order ts_order(Timestamp a, Timestamp b) noexcept {
  if (a < b) return Order::less;
  if (b < a) return Order::greater;
  return Order::equal;
}

bool version_less(const VersionId& a, const VersionId& b) noexcept {
  if (!b) return false;
  if (!a) return true;
  return *a < *b;
}

std::size_t metadata_bytes(const WriteRecord& w) {
  // ts, then a length-prefixed key per sibling and per dependency (+ its ts).
  std::size_t n = sizeof(std::uint64_t);
  for (const auto& s : w.sibs) n += 1 + s.size();
  for (const auto& d : w.deps) n += 1 + d.key.size() + sizeof(std::uint64_t);
  return n;
}

bool Predicate::matches(const std::optional<Value>& v) const noexcept {
  if (!v) return false;
  return !equals || *equals == *v;
}

bool Predicate::overlaps(const Predicate& other) const noexcept {
  return std::max(lo, other.lo) < std::min(hi, other.hi);
}

std::string Predicate::range_text() const { return lo + "~" + hi; }

Predicate parse_predicate_range(std::string_view text) {
  auto pos = text.find('~');
  if (pos == std::string_view::npos) throw std::invalid_argument("predicate range lacks '~'");
  Predicate p;
  p.lo = std::string(text.substr(0, pos));
  p.hi = std::string(text.substr(pos + 1));
  return p;
}

namespace {

constexpr std::string_view kKindNames[] = {"begin", "read", "write", "pred_read", "commit", "abort"};

std::string encode_version(const VersionId& v) {
  return v ? std::to_string(v->encoded()) : std::string("B");
}

std::uint64_t parse_u64(std::string_view s, std::size_t line, const char* field) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(line, std::string("bad ") + field + " '" + std::string(s) + "'");
  }
  return out;
}

std::int64_t parse_i64(std::string_view s, std::size_t line, const char* field) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(line, std::string("bad ") + field + " '" + std::string(s) + "'");
  }
  return out;
}

VersionId parse_version(std::string_view s, std::size_t line) {
  if (s == "B") return std::nullopt;
  return Timestamp::from_encoded(parse_u64(s, line, "timestamp"));
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string_view to_string(EventKind k) { return kKindNames[static_cast<int>(k)]; }

std::optional<EventKind> parse_event_kind(std::string_view s) {
  for (int i = 0; i < 6; ++i) {
    if (kKindNames[i] == s) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

std::string to_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex string");
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_digit(hex[i]);
    int lo = hex_digit(hex[i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument("non-hex character");
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

bool valid_key(std::string_view k) noexcept {
  if (k.empty() || k == "-" || k == "B") return false;
  return std::all_of(k.begin(), k.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::string encode_event(const HistoryEvent& e) {
  std::string out;
  out.reserve(64 + (e.value ? e.value->size() * 2 : 0));
  out += std::to_string(e.seq_no);
  out += '\t';
  out += std::to_string(e.sim_time);
  out += '\t';
  out += e.session ? *e.session : "-";
  out += '\t';
  out += std::to_string(e.txn.encoded());
  out += '\t';
  out += to_string(e.kind);
  out += '\t';
  out += e.key ? *e.key : "-";
  out += '\t';
  out += e.value ? to_hex(*e.value) : "-";
  out += '\t';
  out += e.version ? encode_version(*e.version) : "-";
  out += '\t';
  if (e.vset.empty()) {
    out += '-';
  } else {
    for (std::size_t i = 0; i < e.vset.size(); ++i) {
      if (i) out += ',';
      out += e.vset[i].key;
      out += ':';
      out += encode_version(e.vset[i].version);
    }
  }
  out += '\t';
  out += e.reserved;
  return out;
}

HistoryEvent decode_event(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    f.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (f.size() != 10) {
    throw ParseError(line_no, "expected 10 tab-separated fields, got " + std::to_string(f.size()));
  }
  HistoryEvent e;
  e.seq_no = parse_u64(f[0], line_no, "seq_no");
  e.sim_time = parse_i64(f[1], line_no, "sim_time");
  if (f[2] != "-") e.session = std::string(f[2]);
  e.txn = Timestamp::from_encoded(parse_u64(f[3], line_no, "txn"));
  auto kind = parse_event_kind(f[4]);
  if (!kind) throw ParseError(line_no, "unknown event kind '" + std::string(f[4]) + "'");
  e.kind = *kind;
  if (f[5] != "-") e.key = std::string(f[5]);
  if (f[6] != "-") {
    try {
      e.value = from_hex(f[6]);
    } catch (const std::invalid_argument& ex) {
      throw ParseError(line_no, std::string("bad value: ") + ex.what());
    }
  }
  if (f[7] != "-") e.version = parse_version(f[7], line_no);
  if (f[8] != "-") {
    std::size_t s = 0;
    while (s <= f[8].size()) {
      auto comma = f[8].find(',', s);
      auto item = f[8].substr(s, comma == std::string_view::npos ? std::string_view::npos : comma - s);
      auto colon = item.rfind(':');
      if (colon == std::string_view::npos) throw ParseError(line_no, "vset entry lacks ':'");
      e.vset.push_back({std::string(item.substr(0, colon)), parse_version(item.substr(colon + 1), line_no)});
      if (comma == std::string_view::npos) break;
      s = comma + 1;
    }
  }
  e.reserved = std::string(f[9]);
  return e;
}

std::string encode_history(const History& h) {
  std::string out;
  for (const auto& e : h) {
    out += encode_event(e);
    out += '\n';
  }
  return out;
}

History decode_history(std::string_view text) {
  History h;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    ++line_no;
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) h.push_back(decode_event(line, line_no));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return h;
}

void write_history_file(const std::string& path, const History& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << encode_history(h);
}

History read_history_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_history(ss.str());
}

SessionOrder session_order(const History& h) {
  SessionOrder out;
  for (const auto& e : h) {
    if (e.kind == EventKind::commit && e.session) out[*e.session].push_back(e.txn);
  }
  return out;
}

}  // namespace hatkv
