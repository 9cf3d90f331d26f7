#pragma once

#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "raven/puzzle.hpp"

namespace raven {

enum class PuzzleView { full, public_only };

// grid: 9 assignments (the last is null in the public view), choices: 6,
// answer_index and structure (omitted in the public view).
nlohmann::json puzzle_to_json(const RpmInstance& p, PuzzleView view = PuzzleView::full);
RpmInstance puzzle_from_json(const nlohmann::json& j, SpacePtr space);

struct DatasetSpec {
  nlohmann::json space_config;
  std::size_t count = 0;
  std::uint64_t master_seed = 0;
  std::size_t rule_count = 1;
};

struct WriteOptions {
  PuzzleView view = PuzzleView::full;
  bool render = false;
  int render_size = 64;
};

// Directory layout: manifest.json plus puzzle_NNNNNN.json per puzzle; with
// rendering, puzzle_NNNNNN/p{row}{col}.ppm and c{k}.ppm (rows/cols 1-based).
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const WriteOptions& options = {});

struct Dataset {
  DatasetSpec spec;
  SpacePtr space;
  std::vector<RpmInstance> puzzles;
};

Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace raven
