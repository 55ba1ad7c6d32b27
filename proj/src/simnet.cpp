#include "hatkv/simnet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hatkv {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string strip_comment(std::string line) {
  auto hash = line.find('#');
  if (hash != std::string::npos) line.erase(hash);
  return line;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined input
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RttMatrix::RttMatrix(std::vector<std::string> names, std::vector<double> rtt_ms)
    : names_(std::move(names)), rtt_(std::move(rtt_ms)) {
  const std::size_t n = names_.size();
  if (rtt_.size() != n * n) throw ConfigError("rtt matrix size does not match cluster count");
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (rtt_[a * n + b] < 0) throw ConfigError("negative rtt");
      if (std::abs(rtt_[a * n + b] - rtt_[b * n + a]) > 1e-9) {
        throw ConfigError("rtt matrix not symmetric at " + names_[a] + "/" + names_[b]);
      }
      if (a != b && rtt_[a * n + a] > rtt_[a * n + b]) {
        throw ConfigError("rtt diagonal exceeds off-diagonal entry for " + names_[a]);
      }
    }
  }
}

RttMatrix RttMatrix::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    auto toks = split_ws(strip_comment(line));
    if (toks.empty()) continue;
    if (header.empty()) {
      header = toks;
    } else {
      rows.push_back(toks);
    }
  }
  const std::size_t n = header.size();
  if (n == 0) throw ConfigError("rtt matrix: missing header row");
  if (rows.size() != n) throw ConfigError("rtt matrix: expected " + std::to_string(n) + " rows");
  std::vector<double> m(n * n, std::nan(""));
  for (std::size_t r = 0; r < n; ++r) {
    if (rows[r].size() != n + 1) throw ConfigError("rtt matrix: row " + std::to_string(r + 1) + " has wrong width");
    if (rows[r][0] != header[r]) throw ConfigError("rtt matrix: row name " + rows[r][0] + " != " + header[r]);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& tok = rows[r][c + 1];
      if (tok == "-") continue;
      try {
        m[r * n + c] = std::stod(tok);
      } catch (const std::exception&) {
        throw ConfigError("rtt matrix: bad number '" + tok + "'");
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      double& ab = m[a * n + b];
      double ba = m[b * n + a];
      if (std::isnan(ab)) ab = ba;
      if (std::isnan(ab)) {
        if (a != b) throw ConfigError("rtt matrix: missing entry " + header[a] + "/" + header[b]);
        ab = kIntraClusterRttMs;
      }
    }
  }
  return RttMatrix(header, m);
}

RttMatrix RttMatrix::load(const std::string& path) { return parse(read_file(path)); }

RttMatrix RttMatrix::ec2_default() {
  static const char* kTable =
      "    CA    OR    VA    TO    IR    SY    SP    SI\n"
      "CA  -     22.5  84.5  143.7 169.8 179.1 185.9 186.9\n"
      "OR  -     -     82.9  135.1 170.6 200.6 207.8 234.4\n"
      "VA  -     -     -     202.4 107.9 265.6 163.4 253.5\n"
      "TO  -     -     -     -     278.3 144.2 301.4 90.6\n"
      "IR  -     -     -     -     -     346.2 239.8 234.1\n"
      "SY  -     -     -     -     -     -     333.6 243.1\n"
      "SP  -     -     -     -     -     -     -     362.8\n"
      "SI  -     -     -     -     -     -     -     -\n";
  return parse(kTable);
}

std::optional<std::size_t> RttMatrix::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

RttMatrix RttMatrix::select(const std::vector<std::string>& names) const {
  std::vector<std::size_t> idx;
  for (const auto& n : names) {
    auto i = index_of(n);
    if (!i) throw ConfigError("cluster " + n + " not in rtt matrix");
    idx.push_back(*i);
  }
  std::vector<double> m(idx.size() * idx.size());
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = 0; b < idx.size(); ++b) m[a * idx.size() + b] = rtt_ms(idx[a], idx[b]);
  }
  return RttMatrix(names, m);
}

RttMatrix RttMatrix::scaled(double factor) const {
  const std::size_t n = names_.size();
  std::vector<double> m = rtt_;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b) m[a * n + b] *= factor;
    }
  }
  return RttMatrix(names_, m);
}

std::string RttMatrix::to_text() const {
  std::ostringstream os;
  os << std::setprecision(10);
  for (const auto& n : names_) os << '\t' << n;
  os << '\n';
  for (std::size_t a = 0; a < names_.size(); ++a) {
    os << names_[a];
    for (std::size_t b = 0; b < names_.size(); ++b) os << '\t' << rtt_ms(a, b);
    os << '\n';
  }
  return os.str();
}

SimTime Topology::base_one_way(NodeId a, NodeId b) const {
  if (a == b) return 0;
  // Round-trip halves, computed in integer nanoseconds.
  return ms_to_sim(rtt.rtt_ms(node_cluster[a], node_cluster[b])) / 2;
}

std::vector<ScenarioAction> parse_scenario(const std::string& text) {
  std::vector<ScenarioAction> out;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto toks = split_ws(strip_comment(line));
    if (toks.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError("scenario line " + std::to_string(line_no) + ": " + why);
    };
    if (toks.size() < 3 || toks[0] != "at") fail("expected 'at <ms> <action>'");
    ScenarioAction a;
    try {
      a.at_ms = std::stod(toks[1]);
    } catch (const std::exception&) {
      fail("bad time '" + toks[1] + "'");
    }
    if (a.at_ms < 0) fail("negative time");
    if (toks[2] == "heal" && toks.size() == 3) {
      a.kind = ScenarioAction::Kind::heal;
    } else if (toks[2] == "stop" && toks.size() == 3) {
      a.kind = ScenarioAction::Kind::stop;
    } else if (toks[2] == "partition" && toks.size() == 4) {
      a.kind = ScenarioAction::Kind::partition;
      std::string spec = toks[3];
      std::size_t s = 0;
      while (true) {
        auto bar = spec.find('|', s);
        std::string group = spec.substr(s, bar == std::string::npos ? std::string::npos : bar - s);
        std::vector<std::string> members;
        std::size_t gs = 0;
        while (true) {
          auto comma = group.find(',', gs);
          auto tok = group.substr(gs, comma == std::string::npos ? std::string::npos : comma - gs);
          if (tok.empty()) fail("empty partition member");
          members.push_back(tok);
          if (comma == std::string::npos) break;
          gs = comma + 1;
        }
        a.groups.push_back(std::move(members));
        if (bar == std::string::npos) break;
        s = bar + 1;
      }
      if (a.groups.size() < 2) fail("partition needs at least two groups");
    } else {
      fail("unknown action '" + toks[2] + "'");
    }
    out.push_back(std::move(a));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScenarioAction& x, const ScenarioAction& y) { return x.at_ms < y.at_ms; });
  return out;
}

std::vector<ScenarioAction> load_scenario(const std::string& path) { return parse_scenario(read_file(path)); }

}  // namespace hatkv
