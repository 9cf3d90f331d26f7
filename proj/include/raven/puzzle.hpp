#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "raven/factor_space.hpp"
#include "raven/rng.hpp"

namespace raven {

inline constexpr int kRows = 3;     // M
inline constexpr int kChoices = 6;  // |A|
inline constexpr int kContextPanels = kRows * kRows - 1;

// Only constant-in-a-row is generated; the enumeration is the extension point
// for further relations.
enum class Relation { constant_in_row };

struct RulePair {
  Relation relation = Relation::constant_in_row;
  std::size_t factor = 0;

  friend bool operator==(const RulePair&, const RulePair&) = default;
};

struct Structure {
  std::vector<RulePair> pairs;

  bool has_factor(std::size_t k) const;
  std::vector<std::size_t> factors() const;

  friend bool operator==(const Structure&, const Structure&) = default;
};

using AssignmentGrid = std::array<std::array<FactorAssignment, kRows>, kRows>;

struct RpmInstance {
  SpacePtr space;
  Structure structure;
  AssignmentGrid grid;  // cell (2,2) is the answer, withheld from solvers
  std::array<FactorAssignment, kChoices> choices;
  int answer_index = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  // The 8 context cells in row-major order.
  std::array<FactorAssignment, kContextPanels> context() const;
};

// What a solver may see: context cells and choices, no answer.
struct PublicPuzzle {
  std::array<FactorAssignment, kContextPanels> context;
  std::array<FactorAssignment, kChoices> choices;
};

PublicPuzzle public_view(const RpmInstance& instance);

Structure sample_structure(const FactorSpace& space, std::size_t rule_count, RngStream& rng);

inline constexpr int kMaxRejections = 1000;

AssignmentGrid generate_matrix(const FactorSpace& space, const Structure& structure, RngStream& rng);

struct ChoicePanel {
  std::array<FactorAssignment, kChoices> choices;
  int answer_index = 0;
};

ChoicePanel generate_choices(const FactorSpace& space, const AssignmentGrid& grid, const Structure& structure,
                             RngStream& rng);

// Full pipeline; the puzzle records (rng.master_seed, rng.stream_id) as provenance.
RpmInstance generate_puzzle(SpacePtr space, std::size_t rule_count, RngStream rng);

// Puzzle `index` of a dataset with the given seed uses stream `index`.
RpmInstance generate_puzzle_at(SpacePtr space, std::size_t rule_count, std::uint64_t master_seed,
                               std::uint64_t index);

// True when every rule factor is constant across the three cells.
bool row_satisfies(const Structure& structure, const FactorAssignment& a, const FactorAssignment& b,
                   const FactorAssignment& c);

struct ValidityReport {
  bool ok = true;
  std::string violation;

  explicit operator bool() const { return ok; }
};

ValidityReport validate_puzzle(const RpmInstance& instance);

}  // namespace raven
