#include <catch_amalgamated.hpp>

#include <cmath>

#include "raven/oracle.hpp"
#include "raven/reasoner.hpp"

using namespace raven;

namespace {

MetaTensor random_meta(RngStream& r, std::size_t D) {
  std::vector<std::vector<double>> ctx(8, std::vector<double>(D)), ch(6, std::vector<double>(D));
  for (auto& v : ctx)
    for (auto& x : v) x = r.uniform(-1, 1);
  for (auto& v : ch)
    for (auto& x : v) x = r.uniform(-1, 1);
  return build_meta(ctx, ch);
}

}  // namespace

TEST_CASE("meta tensor layout") {
  RngStream r(1, 0);
  std::vector<std::vector<double>> ctx(8, std::vector<double>(10)), ch(6, std::vector<double>(10));
  for (std::size_t i = 0; i < 8; ++i) ctx[i][0] = static_cast<double>(i);
  for (std::size_t i = 0; i < 6; ++i) ch[i][0] = 100.0 + static_cast<double>(i);
  const auto m = build_meta(ctx, ch);
  CHECK(m.rows.size() == 8);
  CHECK(m.dim() == 10);
  CHECK(m.rows[1][2][0] == 5.0);
  CHECK(m.rows[4][0][0] == 6.0);
  CHECK(m.rows[4][1][0] == 7.0);
  CHECK(m.rows[4][2][0] == 102.0);
  std::swap(ch[0], ch[1]);
  const auto s = build_meta(ctx, ch);
  CHECK(s.rows[2] == m.rows[3]);
  CHECK(s.rows[3] == m.rows[2]);
  CHECK(s.rows[0] == m.rows[0]);
  ctx.pop_back();
  CHECK_THROWS_AS(build_meta(ctx, ch), std::invalid_argument);
}

TEST_CASE("row std is the population standard deviation") {
  const std::array<std::vector<double>, 3> row{std::vector<double>{0.0, 0.3}, {0.0, 0.3}, {3.0, 0.3}};
  const auto s = row_std(row);
  CHECK(s[0] == Catch::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(s[1] == 0.0);
  const std::array<std::vector<double>, 3> perm{row[2], row[0], row[1]};
  CHECK(row_std(perm)[0] == Catch::Approx(s[0]).epsilon(1e-15));
}

TEST_CASE("candidate scoring is permutation equivariant") {
  const Reasoner psi({4, 16, 0.5}, RngStream(2, 0));
  RngStream r(3, 0);
  for (int i = 0; i < 50; ++i) {
    auto f = candidate_features(random_meta(r, 4));
    const auto logits = psi.score(f);
    std::array<std::size_t, 6> perm{0, 1, 2, 3, 4, 5};
    shuffle(perm.begin(), perm.end(), r);
    std::array<std::vector<double>, 6> g;
    for (std::size_t a = 0; a < 6; ++a) g[a] = f[perm[a]];
    const auto permuted = psi.score(g);
    for (std::size_t a = 0; a < 6; ++a) REQUIRE(permuted[a] == logits[perm[a]]);
  }
}

TEST_CASE("identical features score identically; zero output layer ties to index 0") {
  Reasoner psi({4, 8, 0.5}, RngStream(4, 0));
  RngStream r(5, 0);
  auto f = candidate_features(random_meta(r, 4));
  f[4] = f[1];
  const auto l = psi.score(f);
  CHECK(l[4] == l[1]);
  auto& params = psi.network().parameters();
  for (auto* p : {&params[params.size() - 2], &params.back()}) std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
  const auto z = psi.score(f);
  for (const auto v : z) CHECK(v == 0.0);
  CHECK(predict(z) == 0);
  f[0].push_back(1.0);
  CHECK_THROWS_AS(psi.score(f), std::invalid_argument);
}

TEST_CASE("prediction and loss") {
  const std::vector<double> zeros(6, 0.0);
  CHECK(std::abs(reasoner_loss(zeros, 3) - std::log(6.0)) < 1e-12);
  const std::vector<double> l{0.1, 0.3, 2.0, -1.0, 0.3, 1.9};
  CHECK(predict(l) == 2);
  std::vector<double> shifted = l;
  for (auto& v : shifted) v += 7.5;
  CHECK(predict(shifted) == 2);
  CHECK(reasoner_loss(shifted, 4) == Catch::Approx(reasoner_loss(l, 4)).epsilon(1e-12));
  CHECK_THROWS_AS(reasoner_loss(l, 6), std::invalid_argument);
  CHECK_THROWS_AS(reasoner_loss(l, -1), std::invalid_argument);
}

TEST_CASE("differentiable features agree with the direct computation") {
  RngStream r(6, 0);
  constexpr std::size_t D = 3, B = 2;
  Tensor<float> means({B * kPanelsPerPuzzle, D});
  for (auto& v : means.data) v = static_cast<float>(r.uniform(-1, 1));
  Tape<float> t;
  const auto& f = t.value(candidate_features(t, t.constant(means), B));
  REQUIRE(f.shape == Shape{B * kChoices, 3 * D});
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::vector<double>> ctx, ch;
    for (std::size_t i = 0; i < kPanelsPerPuzzle; ++i) {
      std::vector<double> v(D);
      for (std::size_t d = 0; d < D; ++d) v[d] = means(b * kPanelsPerPuzzle + i, d);
      (i < kContextPanels ? ctx : ch).push_back(v);
    }
    const auto direct = candidate_features(build_meta(ctx, ch));
    for (std::size_t a = 0; a < kChoices; ++a)
      for (std::size_t j = 0; j < 3 * D; ++j) REQUIRE(f(b * kChoices + a, j) == Catch::Approx(direct[a][j]).margin(1e-5));
  }
}

TEST_CASE("oracle latents separate the answer on rule dims") {
  auto space = std::make_shared<const FactorSpace>(build_space("dsprites-like"));
  std::size_t separated = 0, negatives = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto p = generate_puzzle_at(space, 1, 21, i);
    const auto s = row_std(build_meta(oracle_latents(p, 6)));
    for (std::size_t a = 0; a < kChoices; ++a) {
      bool any = false;
      for (const auto k : p.structure.factors()) any = any || s[2 + a][k] > 0;
      if (static_cast<int>(a) == p.answer_index) {
        REQUIRE(!any);
      } else {
        ++negatives;
        separated += any;
      }
    }
  }
  CHECK(static_cast<double>(separated) / static_cast<double>(negatives) >= 0.99);
}
