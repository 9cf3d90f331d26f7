#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "raven/dataset.hpp"

using namespace raven;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("dataset write/read round trip") {
  const auto dir = fresh_dir("raven_dataset_full");
  write_dataset(dir, {{{"preset", "toy3"}}, 25, 7, 2});
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "puzzle_000024.json"));
  const auto ds = read_dataset(dir);
  REQUIRE(ds.puzzles.size() == 25);
  for (std::size_t i = 0; i < ds.puzzles.size(); ++i) {
    const auto expect = generate_puzzle_at(ds.space, 2, 7, i);
    REQUIRE(ds.puzzles[i].grid == expect.grid);
    REQUIRE(ds.puzzles[i].choices == expect.choices);
    REQUIRE(ds.puzzles[i].answer_index == expect.answer_index);
    REQUIRE(ds.puzzles[i].structure == expect.structure);
  }
  fs::remove_all(dir);
}

TEST_CASE("public view withholds the answer") {
  auto space = std::make_shared<const FactorSpace>(build_space("toy2"));
  const auto p = generate_puzzle_at(space, 1, 1, 3);
  const auto j = puzzle_to_json(p, PuzzleView::public_only);
  CHECK(j.at("grid").at(8).is_null());
  CHECK(!j.contains("answer_index"));
  CHECK(!j.contains("structure"));
  const auto full = puzzle_to_json(p);
  CHECK(full.at("answer_index") == p.answer_index);
  const auto back = puzzle_from_json(full, space);
  CHECK(back.grid == p.grid);
}

TEST_CASE("rendered datasets carry one image per panel") {
  const auto dir = fresh_dir("raven_dataset_render");
  write_dataset(dir, {{{"preset", "toy2"}}, 2, 3, 1}, {PuzzleView::full, true, 16});
  CHECK(fs::exists(dir / "puzzle_000000" / "p11.ppm"));
  CHECK(fs::exists(dir / "puzzle_000000" / "p32.ppm"));
  CHECK(fs::exists(dir / "puzzle_000001" / "c5.ppm"));
  fs::remove_all(dir);
}

TEST_CASE("missing records are reported") {
  const auto dir = fresh_dir("raven_dataset_missing");
  write_dataset(dir, {{{"preset", "toy2"}}, 3, 3, 1});
  fs::remove(dir / "puzzle_000001.json");
  CHECK_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("missing record"));
  fs::remove_all(dir);
  CHECK_THROWS_WITH(read_dataset(dir), Catch::Matchers::ContainsSubstring("manifest"));
}
