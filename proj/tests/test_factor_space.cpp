#include <catch_amalgamated.hpp>

#include <map>

#include "raven/factor_space.hpp"

using namespace raven;

TEST_CASE("presets have the documented factor grids") {
  const std::map<std::string, std::vector<int>> expected{
      {"dsprites-like", {3, 3, 4, 4}},
      {"mod-dsprites-like", {3, 3, 4, 4, 6, 5}},
      {"shapes3d-like", {10, 10, 10, 4, 4}},
      {"toy2", {3, 6}},
      {"toy3", {3, 3, 6}},
  };
  for (const auto& name : preset_names()) {
    const auto s = build_space(name);
    std::vector<int> cards;
    for (const auto& f : s.factors()) cards.push_back(f.cardinality);
    INFO(name);
    CHECK(cards == expected.at(name));
  }
  CHECK(build_space("dsprites-like").total_combinations() == 144);
  CHECK_THROWS_AS(build_space("nope"), std::invalid_argument);
}

TEST_CASE("construction rejects bad factor lists") {
  CHECK_THROWS_AS(FactorSpace(std::vector<FactorDef>{}), std::invalid_argument);
  CHECK_THROWS_AS(build_space({{"a", 1}, {"b", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(build_space({{"a", 3}, {"a", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(build_space({{"a", 3}}), std::invalid_argument);
  std::vector<FactorDef> huge(5, {"", 1 << 16});
  for (int i = 0; i < 5; ++i) huge[static_cast<std::size_t>(i)].name = "f" + std::to_string(i);
  CHECK_THROWS_AS(FactorSpace(huge), std::overflow_error);
}

TEST_CASE("assignment index is row-major with the last factor fastest") {
  const auto s = build_space("toy2");
  CHECK(assignment_index(s, {{2, 5}}) == 17);
  CHECK(assignment_index(s, {{0, 0}}) == 0);
  CHECK(assignment_index(s, {{1, 0}}) == 6);
  for (std::uint64_t i = 0; i < s.total_combinations(); ++i) REQUIRE(assignment_index(s, index_to_assignment(s, i)) == i);
  CHECK_THROWS(assignment_index(s, {{3, 0}}));
  CHECK_THROWS(assignment_index(s, {{0, 0, 0}}));
}

TEST_CASE("sample_assignment is uniform over the grid") {
  const auto s = build_space("toy2");
  RngStream r(1, 0);
  std::vector<int> counts(18, 0);
  constexpr int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[assignment_index(s, sample_assignment(s, r))];
  for (const auto c : counts) CHECK(static_cast<double>(c) / n == Catch::Approx(1.0 / 18).margin(0.01));
}

TEST_CASE("space JSON round trip") {
  for (const auto& name : preset_names()) {
    const auto s = build_space(name);
    CHECK(space_from_json(space_to_json(s)) == s);
  }
  CHECK(space_from_json({{"preset", "toy3"}}) == build_space("toy3"));
  const nlohmann::json custom = {{"factors",
                                  {{{"name", "a"}, {"cardinality", 2}, {"kind", "ordinal"}, {"render_role", "size"}},
                                   {{"name", "b"}, {"cardinality", 4}}}}};
  const auto c = space_from_json(custom);
  CHECK(c.num_factors() == 2);
  CHECK(c.factor(0).kind == FactorKind::ordinal);
  CHECK(c.factor(0).render_role == RenderRole::size);
  CHECK(c.factor(1).render_role == RenderRole::none);
}
