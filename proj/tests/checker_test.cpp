#include <gtest/gtest.h>

#include <json.hpp>
#include <random>
#include <set>
#include <tuple>

#include "hatkv/checker.hpp"
#include "history_builder.hpp"

using namespace hatkv;
using namespace hatkv::testkit;

namespace {

std::set<Phenomenon> found(const History& h) {
  std::set<Phenomenon> out;
  for (const auto& f : Checker(h).detect({kAllPhenomena.begin(), kAllPhenomena.end()})) out.insert(f.what);
  return out;
}

void expect_only(const History& h, const Finding& want) {
  auto all = Checker(h).detect({kAllPhenomena.begin(), kAllPhenomena.end()});
  ASSERT_EQ(all.size(), 1u) << [&] {
    std::string s;
    for (const auto& f : all) s += format_finding(f) + "\n";
    return s;
  }();
  EXPECT_EQ(all[0], want) << format_finding(all[0]);
}

}  // namespace

// Golden histories: each shows exactly one phenomenon.

TEST(Golden, EightNamedHistories) {
  for (const auto& g : golden_cases()) {
    SCOPED_TRACE(g.label);
    expect_only(g.history, g.expected);
  }
}

TEST(Golden, ImpFromBottom) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").commit(t1);
  b.begin(t2).r(t2, "x", std::nullopt).r(t2, "x", t1, "1").commit(t2);
  expect_only(b.h, {Phenomenon::IMP, {t2, t1}, {"x"}});
}

TEST(Golden, AbortedRead) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").abort(t1);
  b.begin(t2).r(t2, "x", t1, "1").commit(t2);
  expect_only(b.h, {Phenomenon::G1a, {t2, t1}, {"x"}});
}

TEST(Golden, IntermediateRead) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").w(t1, "x", "2").commit(t1);
  b.begin(t2).r(t2, "x", t1, "1").commit(t2);
  expect_only(b.h, {Phenomenon::G1b, {t2, t1}, {"x"}});
}

TEST(Golden, CircularInformationFlow) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).begin(t2);
  b.w(t1, "x", "1").w(t2, "y", "1");
  b.r(t1, "y", t2, "1").r(t2, "x", t1, "1");
  b.commit(t1).commit(t2);
  auto fs = Checker(b.h).detect(Phenomenon::G1c);
  ASSERT_EQ(fs.size(), 1u);
  EXPECT_EQ(fs[0], (Finding{Phenomenon::G1c, {t1, t2}, {"x", "y"}}));
}

TEST(Golden, PredicateManyPreceders) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "k1", "1").commit(t1);
  b.begin(t2).p(t2, "a", "z", {}).p(t2, "a", "z", {{"k1", t1}}).commit(t2);
  expect_only(b.h, {Phenomenon::PMP, {t2}, {"a~z", "a~z"}});
}

TEST(Checker, EmptyHistory) {
  History h;
  Checker c(h);
  EXPECT_TRUE(c.dsg().nodes.empty());
  EXPECT_TRUE(c.detect({kAllPhenomena.begin(), kAllPhenomena.end()}).empty());
  auto j = nlohmann::json::parse(summary_json({}, {kAllPhenomena.begin(), kAllPhenomena.end()}));
  EXPECT_EQ(j["total"], 0);
  EXPECT_EQ(j["levels"].size(), kAllLevels.size());
  EXPECT_TRUE(serializability_oracle(h));
}

TEST(Checker, MalformedHistories) {
  auto t1 = T(1, 1);
  Builder open;
  open.begin(t1).w(t1, "x", "1");
  EXPECT_THROW(Checker{open.h}, MalformedHistory);

  Builder orphan;
  orphan.r(t1, "x", std::nullopt);
  EXPECT_THROW(Checker{orphan.h}, MalformedHistory);

  Builder twice;
  twice.begin(t1).commit(t1).begin(t1).commit(t1);
  EXPECT_THROW(Checker{twice.h}, MalformedHistory);

  Builder after;
  after.begin(t1).commit(t1).w(t1, "x", "1");
  EXPECT_THROW(Checker{after.h}, MalformedHistory);
}

TEST(Checker, AbortedWritersAreNotNodes) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").abort(t1);
  b.begin(t2).w(t2, "x", "2").commit(t2);
  Checker c(b.h);
  EXPECT_EQ(c.dsg().nodes, std::vector<Timestamp>{t2});
  EXPECT_EQ(c.version_order().order.at("x"), std::vector<Timestamp>{t2});
}

TEST(Checker, PhenomenonNames) {
  for (auto p : kAllPhenomena) EXPECT_EQ(parse_phenomenon(name(p)), p);
  EXPECT_EQ(parse_phenomenon("lost-update"), Phenomenon::LostUpdate);
  EXPECT_EQ(parse_phenomenon("n_mr"), Phenomenon::N_MR);
  EXPECT_EQ(parse_phenomena("all").size(), kAllPhenomena.size());
  EXPECT_EQ(parse_phenomena("G0,OTV,G0"), (std::vector<Phenomenon>{Phenomenon::G0, Phenomenon::OTV}));
  EXPECT_THROW(parse_phenomena("G0,G9"), std::invalid_argument);
}

TEST(Checker, FormatFinding) {
  Finding f{Phenomenon::N_MW, {T(1, 1), T(1, 2), T(2, 1)}, {"x", "y"}};
  EXPECT_EQ(format_finding(f), "N-MW\t10001,20001,10002\tx,y");
}

TEST(Checker, LevelsInSummary) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").w(t1, "y", "1").commit(t1);
  b.begin(t2).r(t2, "x", t1, "1").r(t2, "y", std::nullopt).commit(t2);
  std::vector<Phenomenon> all(kAllPhenomena.begin(), kAllPhenomena.end());
  auto j = nlohmann::json::parse(summary_json(Checker(b.h).detect(all), all));
  EXPECT_EQ(j["counts"]["OTV"], 1);
  std::set<std::string> levels(j["levels"].begin(), j["levels"].end());
  EXPECT_TRUE(levels.count("read-committed"));
  EXPECT_FALSE(levels.count("monotonic-atomic-view"));

  // Unchecked phenomena do not vouch for a level.
  auto partial = nlohmann::json::parse(summary_json({}, {Phenomenon::G0}));
  std::set<std::string> pl(partial["levels"].begin(), partial["levels"].end());
  EXPECT_EQ(pl, std::set<std::string>{"read-uncommitted"});
}

TEST(Checker, ProhibitedSets) {
  auto mav = prohibited_by(Level::monotonic_atomic_view);
  EXPECT_NE(std::find(mav.begin(), mav.end(), Phenomenon::OTV), mav.end());
  auto rr = prohibited_by(Level::repeatable_read);
  EXPECT_NE(std::find(rr.begin(), rr.end(), Phenomenon::LostUpdate), rr.end());
  EXPECT_NE(std::find(rr.begin(), rr.end(), Phenomenon::WriteSkew), rr.end());
  EXPECT_EQ(prohibited_by(Level::causal_sessions).size(), 4u);
}

TEST(Usg, OtvSplitsIntoCycle) {
  auto t1 = T(1, 1), t2 = T(2, 1);
  Builder b;
  b.begin(t1).w(t1, "x", "1").w(t1, "y", "1").commit(t1);
  b.begin(t2).r(t2, "x", t1, "1").r(t2, "y", std::nullopt).commit(t2);
  Checker c(b.h);
  auto u = build_usg(c.dsg(), b.h, t2);
  EXPECT_EQ(u.order_edges(), 1u);
  EXPECT_EQ(u.nodes.size(), 3u);
  EXPECT_TRUE(u.has_cycle());

  // Reading both writes of T1 closes no cycle.
  Builder ok;
  ok.begin(t1).w(t1, "x", "1").w(t1, "y", "1").commit(t1);
  ok.begin(t2).r(t2, "x", t1, "1").r(t2, "y", t1, "1").commit(t2);
  Checker c2(ok.h);
  EXPECT_FALSE(build_usg(c2.dsg(), ok.h, t2).has_cycle());
  EXPECT_THROW(build_usg(c2.dsg(), ok.h, T(9, 9)), std::invalid_argument);
}

TEST(Oracle, SmallCases) {
  auto t1 = T(1, 1), t2 = T(2, 1), t3 = T(3, 1);
  Builder ser;
  ser.begin(t1).w(t1, "x", "1").commit(t1);
  ser.begin(t2).r(t2, "x", t1, "1").w(t2, "y", "1").commit(t2);
  ser.begin(t3).r(t3, "y", t2, "1").r(t3, "x", t1, "1").commit(t3);
  EXPECT_TRUE(serializability_oracle(ser.h));

  Builder skew;
  skew.begin(t1).r(t1, "x", std::nullopt).r(t1, "y", std::nullopt).w(t1, "x", "1").commit(t1);
  skew.begin(t2).r(t2, "x", std::nullopt).r(t2, "y", std::nullopt).w(t2, "y", "1").commit(t2);
  EXPECT_FALSE(serializability_oracle(skew.h));

  // Reader placed before a later writer is fine.
  Builder stale;
  stale.begin(t1).w(t1, "x", "1").commit(t1);
  stale.begin(t2).r(t2, "x", std::nullopt).commit(t2);
  EXPECT_TRUE(serializability_oracle(stale.h));
}

TEST(Oracle, Limits) {
  Builder many;
  for (std::uint64_t i = 1; i <= 7; ++i) many.begin(T(i, 1)).commit(T(i, 1));
  EXPECT_THROW(serializability_oracle(many.h), std::invalid_argument);

  Builder keys;
  auto t1 = T(1, 1);
  keys.begin(t1);
  for (auto k : {"a", "b", "c", "d", "e"}) keys.w(t1, k, "1");
  keys.commit(t1);
  EXPECT_THROW(serializability_oracle(keys.h), std::invalid_argument);

  Builder pred;
  pred.begin(t1).p(t1, "a", "b", {}).commit(t1);
  EXPECT_THROW(serializability_oracle(pred.h), std::invalid_argument);
}

namespace {

using EdgeTuple = std::tuple<Timestamp, Timestamp, EdgeType, Key>;

// Item edges straight from the definitions, quadratic and obvious.
std::set<EdgeTuple> naive_edges(const History& h) {
  std::map<Timestamp, bool> committed;
  std::map<Timestamp, std::set<Key>> writes;
  std::vector<std::tuple<Timestamp, Key, VersionId>> reads;
  for (const auto& e : h) {
    if (e.kind == EventKind::commit) committed[e.txn] = true;
    if (e.kind == EventKind::abort) committed[e.txn] = false;
    if (e.kind == EventKind::write) writes[e.txn].insert(*e.key);
    if (e.kind == EventKind::read) reads.push_back({e.txn, *e.key, *e.version});
  }
  auto installs = [&](Timestamp t, const Key& k) { return committed[t] && writes[t].count(k); };
  std::set<EdgeTuple> out;
  for (const auto& [ti, ki] : writes) {
    for (const auto& [tj, kj] : writes) {
      for (const auto& k : ki) {
        if (!(ti < tj) || !installs(ti, k) || !installs(tj, k)) continue;
        bool between = false;
        for (const auto& [tk, kk] : writes) between = between || (ti < tk && tk < tj && installs(tk, k));
        if (!between) out.insert({ti, tj, EdgeType::ww, k});
      }
    }
  }
  for (const auto& [tr, k, v] : reads) {
    if (!committed[tr] || v == VersionId{tr}) continue;
    if (v && installs(*v, k)) out.insert({*v, tr, EdgeType::wr, k});
    std::optional<Timestamp> next;
    for (const auto& [tw, ks] : writes) {
      if (installs(tw, k) && version_less(v, tw) && (!next || tw < *next)) next = tw;
    }
    if (next && *next != tr) out.insert({tr, *next, EdgeType::rw, k});
  }
  return out;
}

bool has_cycle(const Dsg& g, const std::set<EdgeType>& types) {
  std::vector<std::vector<std::size_t>> adj(g.nodes.size());
  for (const auto& e : g.edges) {
    if (types.count(e.type)) adj[e.from].push_back(e.to);
  }
  std::vector<int> color(g.nodes.size(), 0);
  std::function<bool(std::size_t)> dfs = [&](std::size_t v) {
    color[v] = 1;
    for (auto w : adj[v]) {
      if (color[w] == 1 || (color[w] == 0 && dfs(w))) return true;
    }
    color[v] = 2;
    return false;
  };
  for (std::size_t v = 0; v < adj.size(); ++v) {
    if (color[v] == 0 && dfs(v)) return true;
  }
  return false;
}

}  // namespace

TEST(Property, EdgesMatchNaiveDerivation) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    auto h = random_history(rng, 6);
    Checker c(h);
    std::set<EdgeTuple> got;
    for (const auto& e : c.dsg().edges) {
      if (e.type == EdgeType::ww || e.type == EdgeType::wr || e.type == EdgeType::rw) {
        got.insert({c.dsg().nodes[e.from], c.dsg().nodes[e.to], e.type, e.label});
      }
    }
    ASSERT_EQ(got, naive_edges(h)) << "trial " << trial << "\n" << encode_history(h);
  }
}

TEST(Property, WriteWriteCyclesImpossible) {
  // Version order follows timestamps, so ww edges only ever climb.
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    auto h = random_history(rng, 6);
    EXPECT_TRUE(Checker(h).detect(Phenomenon::G0).empty());
  }
}

TEST(Property, OracleAgreesWithCycleAnalysis) {
  std::mt19937_64 rng(13);
  int serializable = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto h = random_history(rng, 6);
    Checker c(h);
    bool oracle = serializability_oracle(h);
    bool g1 = !c.detect({Phenomenon::G1a, Phenomenon::G1b, Phenomenon::G1c}).empty();
    bool g2 = has_cycle(c.dsg(), {EdgeType::ww, EdgeType::wr, EdgeType::rw});
    ASSERT_EQ(oracle, !g1 && !g2) << "trial " << trial << "\n" << encode_history(h);
    if (oracle) {
      ASSERT_TRUE(c.detect({Phenomenon::LostUpdate, Phenomenon::WriteSkew, Phenomenon::IMP}).empty());
      ++serializable;
    }
  }
  // Both outcomes exercised.
  EXPECT_GT(serializable, 1000);
  EXPECT_LT(serializable, 9000);
}

TEST(Property, FindingsAreDeterministic) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    auto h = random_history(rng, 6);
    std::vector<Phenomenon> all(kAllPhenomena.begin(), kAllPhenomena.end());
    EXPECT_EQ(Checker(h).detect(all), Checker(decode_history(encode_history(h))).detect(all));
  }
}
