#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "raven/rng.hpp"

namespace raven {

enum class FactorKind { categorical, ordinal };

// How the renderer interprets a factor. `wall_color` paints the upper band of
// the background (used by the shapes3d-like preset).
enum class RenderRole { shape, size, pos_x, pos_y, object_color, background_color, wall_color, none };

struct FactorDef {
  std::string name;
  int cardinality = 0;
  FactorKind kind = FactorKind::categorical;
  RenderRole render_role = RenderRole::none;

  friend bool operator==(const FactorDef&, const FactorDef&) = default;
};

struct FactorAssignment {
  std::vector<int> values;

  int operator[](std::size_t k) const { return values[k]; }
  int& operator[](std::size_t k) { return values[k]; }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const FactorAssignment&, const FactorAssignment&) = default;
  friend auto operator<=>(const FactorAssignment&, const FactorAssignment&) = default;
};

// Quantized ground-truth factor grid. Immutable after construction.
class FactorSpace {
 public:
  // Validates: at least one factor, cardinality >= 2, unique names, and a
  // product of cardinalities that fits in 64 bits.
  explicit FactorSpace(std::vector<FactorDef> factors, std::string label = "custom");

  const std::vector<FactorDef>& factors() const { return factors_; }
  const FactorDef& factor(std::size_t k) const { return factors_.at(k); }
  std::size_t num_factors() const { return factors_.size(); }
  std::uint64_t total_combinations() const { return total_; }
  const std::string& label() const { return label_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::optional<std::size_t> find_role(RenderRole role) const;

  bool contains(const FactorAssignment& a) const;
  void check(const FactorAssignment& a) const;

  friend bool operator==(const FactorSpace& a, const FactorSpace& b) { return a.factors_ == b.factors_; }

 private:
  std::vector<FactorDef> factors_;
  std::uint64_t total_ = 1;
  std::string label_;
};

using SpacePtr = std::shared_ptr<const FactorSpace>;

const std::vector<std::string>& preset_names();
FactorSpace build_space(std::string_view preset);
FactorSpace build_space(std::vector<FactorDef> factors);

// {"preset": name} or {"factors": [{"name","cardinality","kind","render_role"}, ...]}
FactorSpace space_from_json(const nlohmann::json& j);
nlohmann::json space_to_json(const FactorSpace& space);
// Accepts a preset name or a path to a JSON space config.
FactorSpace load_space(const std::string& preset_or_path);

FactorAssignment sample_assignment(const FactorSpace& space, RngStream& rng);

// Row-major Cartesian index: the last factor varies fastest.
std::uint64_t assignment_index(const FactorSpace& space, const FactorAssignment& a);
FactorAssignment index_to_assignment(const FactorSpace& space, std::uint64_t index);

std::string_view to_string(FactorKind kind);
std::string_view to_string(RenderRole role);
FactorKind kind_from_string(std::string_view s);
RenderRole role_from_string(std::string_view s);

}  // namespace raven
