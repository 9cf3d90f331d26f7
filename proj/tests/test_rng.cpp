#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "raven/rng.hpp"

using namespace raven;

TEST_CASE("draws are a pure function of seed, stream and counter") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  RngStream c(42, 7, 50);
  RngStream d(42, 7);
  for (int i = 0; i < 50; ++i) d.next_u64();
  REQUIRE(c.next_u64() == d.next_u64());
}

TEST_CASE("different streams and seeds disagree") {
  RngStream a(1, 0), b(1, 1), c(2, 0);
  const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
  CHECK(x != y);
  CHECK(x != z);
  CHECK(y != z);
}

TEST_CASE("substreams are independent of parent progress") {
  RngStream a(3, 4);
  const auto s1 = a.substream(9);
  a.next_u64();
  const auto s2 = a.substream(9);
  RngStream x = s1, y = s2;
  CHECK(x.next_u64() == y.next_u64());
  CHECK(a.substream(9).stream_id() != a.substream(10).stream_id());
}

TEST_CASE("uniform_index covers its range evenly") {
  RngStream r(5, 0);
  constexpr int n = 7, draws = 70000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const auto v = r.uniform_index(n);
    REQUIRE(v < static_cast<std::uint64_t>(n));
    ++counts[v];
  }
  // chi-square with 6 dof; 22.46 is the 0.999 quantile
  double chi = 0;
  const double e = static_cast<double>(draws) / n;
  for (const auto c : counts) chi += (c - e) * (c - e) / e;
  CHECK(chi < 22.46);
}

TEST_CASE("uniform01 and normal moments") {
  RngStream r(6, 0);
  double s = 0, s2 = 0, lo = 1, hi = 0;
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    s += u;
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(s / n == Catch::Approx(0.5).margin(0.01));
  s = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(s / n == Catch::Approx(0.0).margin(0.02));
  CHECK(s2 / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("shuffle yields a permutation") {
  RngStream r(8, 0);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  shuffle(w.begin(), w.end(), r);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}
