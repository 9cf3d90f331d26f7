#include "raven/puzzle.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace raven {

namespace {

bool row_constant(const AssignmentGrid& grid, int row, std::size_t k) {
  const auto& r = grid[static_cast<std::size_t>(row)];
  return r[0][k] == r[1][k] && r[1][k] == r[2][k];
}

int sample_value(const FactorSpace& space, std::size_t k, RngStream& rng) {
  return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(space.factor(k).cardinality)));
}

}  // namespace

bool Structure::has_factor(std::size_t k) const {
  return std::any_of(pairs.begin(), pairs.end(), [k](const RulePair& p) { return p.factor == k; });
}

std::vector<std::size_t> Structure::factors() const {
  std::vector<std::size_t> out;
  for (const auto& p : pairs) out.push_back(p.factor);
  return out;
}

std::array<FactorAssignment, kContextPanels> RpmInstance::context() const {
  std::array<FactorAssignment, kContextPanels> out;
  for (int p = 0; p < kContextPanels; ++p)
    out[static_cast<std::size_t>(p)] = grid[static_cast<std::size_t>(p / kRows)][static_cast<std::size_t>(p % kRows)];
  return out;
}

PublicPuzzle public_view(const RpmInstance& instance) { return {instance.context(), instance.choices}; }

Structure sample_structure(const FactorSpace& space, std::size_t rule_count, RngStream& rng) {
  const std::size_t n = space.num_factors();
  if (rule_count < 1 || rule_count > n)
    throw std::invalid_argument("rule count " + std::to_string(rule_count) + " outside [1, " + std::to_string(n) +
                                "]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first rule_count slots are a uniform subset.
  for (std::size_t i = 0; i < rule_count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(idx[i], idx[j]);
  }
  Structure s;
  for (std::size_t i = 0; i < rule_count; ++i) s.pairs.push_back({Relation::constant_in_row, idx[i]});
  return s;
}

AssignmentGrid generate_matrix(const FactorSpace& space, const Structure& structure, RngStream& rng) {
  const std::size_t n = space.num_factors();
  if (structure.pairs.empty() || structure.pairs.size() > n) throw std::invalid_argument("invalid structure size");
  for (const auto& p : structure.pairs) {
    if (p.factor >= n) throw std::invalid_argument("structure references unknown factor");
    if (space.factor(p.factor).cardinality < kRows)
      throw std::invalid_argument("rule factor '" + space.factor(p.factor).name +
                                  "' needs cardinality >= 3 for distinct row values");
  }

  AssignmentGrid grid;
  for (auto& row : grid)
    for (auto& cell : row) cell.values.assign(n, 0);

  for (std::size_t k = 0; k < n; ++k) {
    if (structure.has_factor(k)) {
      // Three distinct row values, drawn without replacement.
      const int card = space.factor(k).cardinality;
      std::vector<int> pool(static_cast<std::size_t>(card));
      std::iota(pool.begin(), pool.end(), 0);
      for (int r = 0; r < kRows; ++r) {
        const auto j = static_cast<std::size_t>(r) + rng.uniform_index(static_cast<std::uint64_t>(card - r));
        std::swap(pool[static_cast<std::size_t>(r)], pool[j]);
        for (auto& cell : grid[static_cast<std::size_t>(r)]) cell[k] = pool[static_cast<std::size_t>(r)];
      }
      continue;
    }
    int attempts = 0;
    while (true) {
      for (auto& row : grid)
        for (auto& cell : row) cell[k] = sample_value(space, k, rng);
      if (!(row_constant(grid, 0, k) && row_constant(grid, 1, k))) break;
      if (++attempts >= kMaxRejections)
        throw std::runtime_error("distractor constraint unsatisfiable for factor '" + space.factor(k).name + "'");
    }
  }
  return grid;
}

bool row_satisfies(const Structure& structure, const FactorAssignment& a, const FactorAssignment& b,
                   const FactorAssignment& c) {
  return std::all_of(structure.pairs.begin(), structure.pairs.end(), [&](const RulePair& p) {
    return a[p.factor] == b[p.factor] && b[p.factor] == c[p.factor];
  });
}

ChoicePanel generate_choices(const FactorSpace& space, const AssignmentGrid& grid, const Structure& structure,
                             RngStream& rng) {
  const auto& row3 = grid[2];
  const FactorAssignment& answer = row3[2];
  std::vector<FactorAssignment> negatives;
  for (int slot = 0; slot < kChoices - 1; ++slot) {
    int attempts = 0;
    while (true) {
      if (++attempts > kMaxRejections)
        throw std::runtime_error("could not build " + std::to_string(kChoices - 1) +
                                 " distinct negatives: only " + std::to_string(negatives.size()) +
                                 " found in space '" + space.label() + "' (too few combinations break the rule)");
      FactorAssignment candidate = answer;
      // Resample one random factor at a time until the completed row breaks a rule.
      int steps = 0;
      while (row_satisfies(structure, row3[0], row3[1], candidate) && steps++ < kMaxRejections) {
        const auto k = static_cast<std::size_t>(rng.uniform_index(space.num_factors()));
        candidate[k] = sample_value(space, k, rng);
      }
      if (row_satisfies(structure, row3[0], row3[1], candidate)) continue;
      if (candidate == answer || std::find(negatives.begin(), negatives.end(), candidate) != negatives.end())
        continue;
      negatives.push_back(std::move(candidate));
      break;
    }
  }
  ChoicePanel panel;
  panel.answer_index = static_cast<int>(rng.uniform_index(kChoices));
  std::size_t next = 0;
  for (int i = 0; i < kChoices; ++i)
    panel.choices[static_cast<std::size_t>(i)] = i == panel.answer_index ? answer : negatives[next++];
  return panel;
}

RpmInstance generate_puzzle(SpacePtr space, std::size_t rule_count, RngStream rng) {
  RpmInstance inst;
  inst.master_seed = rng.master_seed();
  inst.stream_id = rng.stream_id();
  inst.structure = sample_structure(*space, rule_count, rng);
  inst.grid = generate_matrix(*space, inst.structure, rng);
  auto panel = generate_choices(*space, inst.grid, inst.structure, rng);
  inst.choices = std::move(panel.choices);
  inst.answer_index = panel.answer_index;
  inst.space = std::move(space);
  return inst;
}

RpmInstance generate_puzzle_at(SpacePtr space, std::size_t rule_count, std::uint64_t master_seed,
                               std::uint64_t index) {
  return generate_puzzle(std::move(space), rule_count, RngStream(master_seed, index));
}

ValidityReport validate_puzzle(const RpmInstance& inst) {
  auto fail = [](std::string why) { return ValidityReport{false, std::move(why)}; };
  if (!inst.space) return fail("missing factor space");
  const auto& space = *inst.space;
  const std::size_t n = space.num_factors();

  for (const auto& row : inst.grid)
    for (const auto& cell : row)
      if (!space.contains(cell)) return fail("grid cell outside factor space");
  for (const auto& c : inst.choices)
    if (!space.contains(c)) return fail("choice outside factor space");

  const auto& pairs = inst.structure.pairs;
  if (pairs.empty() || pairs.size() > n) return fail("structure size out of range");
  std::set<std::size_t> seen;
  for (const auto& p : pairs) {
    if (p.factor >= n) return fail("structure references unknown factor");
    if (!seen.insert(p.factor).second) return fail("structure repeats a factor");
  }

  for (int r = 0; r < kRows; ++r)
    for (const auto& p : pairs)
      if (!row_constant(inst.grid, r, p.factor)) return fail("rule not satisfied in row " + std::to_string(r + 1));

  for (const auto& p : pairs) {
    const int a = inst.grid[0][0][p.factor], b = inst.grid[1][0][p.factor], c = inst.grid[2][0][p.factor];
    if (a == b || b == c || a == c) return fail("rule values of factor '" + space.factor(p.factor).name +
                                                "' repeat across rows");
  }

  for (std::size_t k = 0; k < n; ++k) {
    if (inst.structure.has_factor(k)) continue;
    if (row_constant(inst.grid, 0, k) && row_constant(inst.grid, 1, k))
      return fail("distractor constraint: non-rule factor '" + space.factor(k).name + "' constant in rows 1 and 2");
  }

  if (inst.answer_index < 0 || inst.answer_index >= kChoices) return fail("answer index out of range");
  if (inst.choices[static_cast<std::size_t>(inst.answer_index)] != inst.grid[2][2])
    return fail("answer choice does not match the missing cell");

  for (int i = 0; i < kChoices; ++i)
    for (int j = i + 1; j < kChoices; ++j)
      if (inst.choices[static_cast<std::size_t>(i)] == inst.choices[static_cast<std::size_t>(j)])
        return fail("duplicate choices " + std::to_string(i) + " and " + std::to_string(j));

  int consistent = 0;
  for (const auto& c : inst.choices)
    if (row_satisfies(inst.structure, inst.grid[2][0], inst.grid[2][1], c)) ++consistent;
  if (consistent != 1) return fail("choices admit " + std::to_string(consistent) + " solutions (need exactly 1)");
  return {};
}

}  // namespace raven
