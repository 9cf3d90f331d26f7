#include "raven/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "raven/renderer.hpp"

namespace raven {

namespace {

std::string puzzle_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "puzzle_%06zu", i);
  return buf;
}

FactorAssignment assignment_from_json(const nlohmann::json& j) { return {j.get<std::vector<int>>()}; }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

}  // namespace

nlohmann::json puzzle_to_json(const RpmInstance& p, PuzzleView view) {
  nlohmann::json grid = nlohmann::json::array();
  for (int r = 0; r < kRows; ++r)
    for (int c = 0; c < kRows; ++c) {
      if (view == PuzzleView::public_only && r == kRows - 1 && c == kRows - 1)
        grid.push_back(nullptr);
      else
        grid.push_back(p.grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].values);
    }
  nlohmann::json choices = nlohmann::json::array();
  for (const auto& ch : p.choices) choices.push_back(ch.values);
  nlohmann::json j = {{"grid", grid}, {"choices", choices}, {"seed", {{"master_seed", p.master_seed}, {"stream_id", p.stream_id}}}};
  if (view == PuzzleView::full) {
    j["answer_index"] = p.answer_index;
    nlohmann::json s = nlohmann::json::array();
    for (const auto& pair : p.structure.pairs) s.push_back({{"relation", "constant_in_row"}, {"factor", pair.factor}});
    j["structure"] = s;
  }
  return j;
}

RpmInstance puzzle_from_json(const nlohmann::json& j, SpacePtr space) {
  RpmInstance p;
  p.space = std::move(space);
  const auto& grid = j.at("grid");
  if (grid.size() != 9) throw std::invalid_argument("puzzle record needs 9 grid cells");
  for (std::size_t i = 0; i < 9; ++i) {
    if (grid[i].is_null()) continue;
    p.grid[i / 3][i % 3] = assignment_from_json(grid[i]);
  }
  const auto& choices = j.at("choices");
  if (choices.size() != kChoices) throw std::invalid_argument("puzzle record needs 6 choices");
  for (std::size_t i = 0; i < kChoices; ++i) p.choices[i] = assignment_from_json(choices[i]);
  p.answer_index = j.value("answer_index", -1);
  if (j.contains("structure"))
    for (const auto& s : j.at("structure")) {
      if (s.at("relation") != "constant_in_row") throw std::invalid_argument("unsupported relation in record");
      p.structure.pairs.push_back({Relation::constant_in_row, s.at("factor").get<std::size_t>()});
    }
  if (j.contains("seed")) {
    p.master_seed = j["seed"].value("master_seed", std::uint64_t{0});
    p.stream_id = j["seed"].value("stream_id", std::uint64_t{0});
  }
  return p;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const WriteOptions& options) {
  std::filesystem::create_directories(dir);
  auto space = std::make_shared<const FactorSpace>(space_from_json(spec.space_config));
  write_json(dir / "manifest.json", {{"space", spec.space_config},
                                     {"count", spec.count},
                                     {"master_seed", spec.master_seed},
                                     {"l", spec.rule_count},
                                     {"view", options.view == PuzzleView::full ? "full" : "public"}});
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto puzzle = generate_puzzle_at(space, spec.rule_count, spec.master_seed, i);
    write_json(dir / (puzzle_stem(i) + ".json"), puzzle_to_json(puzzle, options.view));
    if (!options.render) continue;
    const auto panel_dir = dir / puzzle_stem(i);
    std::filesystem::create_directories(panel_dir);
    for (int r = 0; r < kRows; ++r)
      for (int c = 0; c < kRows; ++c) {
        if (options.view == PuzzleView::public_only && r == kRows - 1 && c == kRows - 1) continue;
        write_pnm(render(*space, puzzle.grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)],
                         options.render_size),
                  panel_dir / ("p" + std::to_string(r + 1) + std::to_string(c + 1) + ".ppm"));
      }
    for (int k = 0; k < kChoices; ++k)
      write_pnm(render(*space, puzzle.choices[static_cast<std::size_t>(k)], options.render_size),
                panel_dir / ("c" + std::to_string(k) + ".ppm"));
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in '" + dir.string() + "'");
  const auto manifest = nlohmann::json::parse(in);
  Dataset ds;
  ds.spec.space_config = manifest.at("space");
  ds.spec.count = manifest.at("count").get<std::size_t>();
  ds.spec.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  ds.spec.rule_count = manifest.at("l").get<std::size_t>();
  ds.space = std::make_shared<const FactorSpace>(space_from_json(ds.spec.space_config));
  for (std::size_t i = 0; i < ds.spec.count; ++i) {
    std::ifstream rec(dir / (puzzle_stem(i) + ".json"));
    if (!rec) throw std::runtime_error("missing record " + puzzle_stem(i));
    ds.puzzles.push_back(puzzle_from_json(nlohmann::json::parse(rec), ds.space));
  }
  return ds;
}

}  // namespace raven
