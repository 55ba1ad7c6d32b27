#include <gtest/gtest.h>

#include <random>
#include <set>

#include "hatkv/core.hpp"

using namespace hatkv;

TEST(Timestamp, Encoding) {
  EXPECT_EQ(make_timestamp(1, 1).encoded(), 10001u);
  EXPECT_EQ(make_timestamp(0, 0).encoded(), 0u);
  EXPECT_EQ(make_timestamp(2, 3).encoded(), 30002u);
  auto t = make_timestamp(9999, 42);
  EXPECT_EQ(t.client(), 9999u);
  EXPECT_EQ(t.seq(), 42u);
}

TEST(Timestamp, ClientOutOfRange) {
  EXPECT_THROW(make_timestamp(10000, 1), EncodingError);
  EXPECT_THROW(make_timestamp(1, UINT64_MAX / 1000), EncodingError);
}

TEST(Timestamp, StrictlyIncreasingInSeq) {
  for (std::uint64_t c : {0u, 7u, 9999u}) {
    for (std::uint64_t s = 0; s < 100; ++s) EXPECT_LT(make_timestamp(c, s), make_timestamp(c, s + 1));
  }
}

TEST(Timestamp, Bijection) {
  std::mt19937_64 g(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    std::uint64_t c = g() % 10000, s = g() % 1000000;
    auto t = make_timestamp(c, s);
    EXPECT_EQ(t.client(), c);
    EXPECT_EQ(t.seq(), s);
    EXPECT_EQ(Timestamp::from_encoded(t.encoded()), t);
    seen.insert(c * 1000000 + s);
  }
}

TEST(TsOrder, Basics) {
  auto a = Timestamp::from_encoded(10001), b = Timestamp::from_encoded(30002);
  EXPECT_EQ(ts_order(a, b), Order::less);
  EXPECT_EQ(ts_order(a, a), Order::equal);
  EXPECT_EQ(ts_order(b, a), Order::greater);
}

TEST(TsOrder, AntisymmetricTransitive) {
  std::mt19937_64 g(11);
  auto rnd = [&] { return Timestamp::from_encoded(g() % 1000); };
  for (int i = 0; i < 10000; ++i) {
    auto a = rnd(), b = rnd(), c = rnd();
    auto ab = ts_order(a, b), ba = ts_order(b, a);
    if (ab == Order::less) EXPECT_EQ(ba, Order::greater);
    if (ab == Order::equal) {
      EXPECT_EQ(ba, Order::equal);
      EXPECT_EQ(a, b);
    }
    if (ab == Order::less && ts_order(b, c) == Order::less) EXPECT_EQ(ts_order(a, c), Order::less);
  }
}

TEST(Version, BottomFirst) {
  VersionId bot;
  VersionId one = Timestamp::from_encoded(1);
  EXPECT_TRUE(version_less(bot, one));
  EXPECT_FALSE(version_less(one, bot));
  EXPECT_FALSE(version_less(bot, bot));
}

TEST(Event, GoldenLine) {
  std::string line = "7\t1500000\tS1\t10001\twrite\tx\t01\t10001\t-\t-";
  auto e = decode_event(line);
  EXPECT_EQ(e.seq_no, 7u);
  EXPECT_EQ(e.sim_time, 1500000);
  EXPECT_EQ(*e.session, "S1");
  EXPECT_EQ(e.txn.encoded(), 10001u);
  EXPECT_EQ(e.kind, EventKind::write);
  EXPECT_EQ(*e.key, "x");
  EXPECT_EQ(*e.value, std::string("\x01"));
  EXPECT_EQ(encode_event(e), line);
}

TEST(Event, BottomMarker) {
  HistoryEvent e;
  e.txn = make_timestamp(1, 1);
  e.kind = EventKind::read;
  e.key = "x";
  e.version = VersionId{};
  auto line = encode_event(e);
  EXPECT_NE(line.find("\tB\t"), std::string::npos);
  auto back = decode_event(line);
  ASSERT_TRUE(back.version.has_value());
  EXPECT_FALSE(back.version->has_value());
}

TEST(Event, ParseErrorsCarryLine) {
  try {
    decode_history("0\t0\t-\t1\tbegin\t-\t-\t-\t-\t-\n1\t0\t-\t1\tnope\t-\t-\t-\t-\t-\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(decode_event("1\t2\t3"), ParseError);
  EXPECT_THROW(decode_event("x\t0\t-\t1\tbegin\t-\t-\t-\t-\t-"), ParseError);
  EXPECT_THROW(decode_event("0\t0\t-\t1\twrite\tk\tzz\t-\t-\t-"), ParseError);
}

namespace {

HistoryEvent random_event(std::mt19937_64& g, std::uint64_t i) {
  HistoryEvent e;
  e.seq_no = i;
  e.sim_time = static_cast<std::int64_t>(g() % 1'000'000'000);
  if (g() % 2) e.session = "s" + std::to_string(g() % 10);
  e.txn = make_timestamp(g() % 10000, g() % 1000);
  e.kind = static_cast<EventKind>(g() % 6);
  auto ver = [&]() -> VersionId {
    if (g() % 4 == 0) return std::nullopt;
    return Timestamp::from_encoded(g() % 100000);
  };
  switch (e.kind) {
    case EventKind::read:
    case EventKind::write: {
      e.key = "k" + std::to_string(g() % 50);
      std::string v(g() % 8, '\0');
      for (auto& c : v) c = static_cast<char>(g());
      e.value = v;
      e.version = ver();
      break;
    }
    case EventKind::pred_read: {
      e.key = "a~z";
      if (g() % 2) e.value = "v";
      for (std::uint64_t n = g() % 4; n > 0; --n) e.vset.push_back({"k" + std::to_string(n), ver()});
      break;
    }
    case EventKind::abort:
      e.reserved = g() % 2 ? "internal" : "external";
      break;
    default:
      break;
  }
  return e;
}

}  // namespace

TEST(Event, RandomRoundTrip) {
  std::mt19937_64 g(1234);
  History h;
  for (std::uint64_t i = 0; i < 1000; ++i) h.push_back(random_event(g, i));
  auto text = encode_history(h);
  auto back = decode_history(text);
  EXPECT_EQ(back, h);
  EXPECT_EQ(encode_history(back), text);
  EXPECT_EQ(text.back(), '\n');
}

TEST(Hex, RoundTrip) {
  EXPECT_EQ(to_hex("\x01\xff"), "01ff");
  EXPECT_EQ(from_hex("01FF"), "\x01\xff");
  EXPECT_THROW(from_hex("0"), std::invalid_argument);
}

TEST(Keys, Validity) {
  EXPECT_TRUE(valid_key("k000042"));
  EXPECT_FALSE(valid_key(""));
  EXPECT_FALSE(valid_key("a\tb"));
  EXPECT_FALSE(valid_key("a:b"));
  EXPECT_FALSE(valid_key("B"));
}

TEST(Predicate, Matching) {
  Predicate p{"a", "m", std::nullopt};
  EXPECT_TRUE(p.in_range("b"));
  EXPECT_FALSE(p.in_range("m"));
  EXPECT_TRUE(p.matches(Value("x")));
  EXPECT_FALSE(p.matches(std::nullopt));
  Predicate q{"c", "z", Value("1")};
  EXPECT_TRUE(q.matches(Value("1")));
  EXPECT_FALSE(q.matches(Value("2")));
  EXPECT_TRUE(p.overlaps(q));
  EXPECT_FALSE(p.overlaps(Predicate{"m", "z", std::nullopt}));
  auto r = parse_predicate_range(p.range_text());
  EXPECT_EQ(r.lo, "a");
  EXPECT_EQ(r.hi, "m");
}

TEST(Metadata, LinearInSiblings) {
  WriteRecord w{"k000001", "v", make_timestamp(1, 1), {}, {}};
  std::vector<std::size_t> sizes;
  for (int n = 1; n <= 4; ++n) {
    w.sibs.push_back("k00000" + std::to_string(n));
    sizes.push_back(metadata_bytes(w));
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) EXPECT_EQ(sizes[i] - sizes[i - 1], 8u);
}

TEST(Sessions, CommitOrder) {
  History h;
  auto ev = [&](std::uint64_t c, std::uint64_t s, EventKind k, std::optional<std::string> sess) {
    HistoryEvent e;
    e.seq_no = h.size();
    e.txn = make_timestamp(c, s);
    e.kind = k;
    e.session = sess;
    h.push_back(e);
  };
  ev(1, 1, EventKind::commit, "a");
  ev(2, 1, EventKind::commit, std::nullopt);
  ev(1, 2, EventKind::abort, "a");
  ev(1, 3, EventKind::commit, "a");
  auto so = session_order(h);
  ASSERT_EQ(so.size(), 1u);
  EXPECT_EQ(so["a"], (std::vector<Timestamp>{make_timestamp(1, 1), make_timestamp(1, 3)}));
}
