#include "raven/factor_space.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace raven {

namespace {

FactorDef def(std::string name, int card, FactorKind kind, RenderRole role) {
  return FactorDef{std::move(name), card, kind, role};
}

constexpr auto cat = FactorKind::categorical;
constexpr auto ord = FactorKind::ordinal;

std::vector<FactorDef> dsprites_factors() {
  return {def("shape", 3, cat, RenderRole::shape), def("size", 3, ord, RenderRole::size),
          def("pos_x", 4, ord, RenderRole::pos_x), def("pos_y", 4, ord, RenderRole::pos_y)};
}

}  // namespace

FactorSpace::FactorSpace(std::vector<FactorDef> factors, std::string label)
    : factors_(std::move(factors)), label_(std::move(label)) {
  if (factors_.empty()) throw std::invalid_argument("factor space needs at least one factor");
  std::set<std::string> names;
  for (const auto& f : factors_) {
    if (f.name.empty()) throw std::invalid_argument("factor name must not be empty");
    if (f.cardinality < 2)
      throw std::invalid_argument("factor '" + f.name + "' has cardinality " + std::to_string(f.cardinality) +
                                  " (must be >= 2)");
    if (!names.insert(f.name).second) throw std::invalid_argument("duplicate factor name '" + f.name + "'");
    std::uint64_t next = 0;
    if (__builtin_mul_overflow(total_, static_cast<std::uint64_t>(f.cardinality), &next))
      throw std::overflow_error("factor space: total combinations overflow 64 bits");
    total_ = next;
  }
}

std::optional<std::size_t> FactorSpace::find(std::string_view name) const {
  for (std::size_t k = 0; k < factors_.size(); ++k)
    if (factors_[k].name == name) return k;
  return std::nullopt;
}

std::optional<std::size_t> FactorSpace::find_role(RenderRole role) const {
  for (std::size_t k = 0; k < factors_.size(); ++k)
    if (factors_[k].render_role == role) return k;
  return std::nullopt;
}

bool FactorSpace::contains(const FactorAssignment& a) const {
  if (a.size() != factors_.size()) return false;
  for (std::size_t k = 0; k < factors_.size(); ++k)
    if (a[k] < 0 || a[k] >= factors_[k].cardinality) return false;
  return true;
}

void FactorSpace::check(const FactorAssignment& a) const {
  if (a.size() != factors_.size())
    throw std::invalid_argument("assignment has " + std::to_string(a.size()) + " values, space has " +
                                std::to_string(factors_.size()) + " factors");
  for (std::size_t k = 0; k < factors_.size(); ++k)
    if (a[k] < 0 || a[k] >= factors_[k].cardinality)
      throw std::out_of_range("factor '" + factors_[k].name + "' index " + std::to_string(a[k]) + " out of range");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"dsprites-like", "mod-dsprites-like", "shapes3d-like", "toy2",
                                                 "toy3"};
  return names;
}

FactorSpace build_space(std::string_view preset) {
  if (preset == "dsprites-like") return FactorSpace(dsprites_factors(), std::string(preset));
  if (preset == "mod-dsprites-like") {
    auto f = dsprites_factors();
    f.push_back(def("object_color", 6, cat, RenderRole::object_color));
    f.push_back(def("background_color", 5, cat, RenderRole::background_color));
    return FactorSpace(std::move(f), std::string(preset));
  }
  if (preset == "shapes3d-like") {
    return FactorSpace({def("floor_color", 10, cat, RenderRole::background_color),
                        def("wall_color", 10, cat, RenderRole::wall_color),
                        def("object_color", 10, cat, RenderRole::object_color), def("size", 4, ord, RenderRole::size),
                        def("shape", 4, cat, RenderRole::shape)},
                       std::string(preset));
  }
  if (preset == "toy2") {
    return FactorSpace({def("size", 3, ord, RenderRole::size), def("object_color", 6, cat, RenderRole::object_color)},
                       std::string(preset));
  }
  if (preset == "toy3") {
    return FactorSpace({def("shape", 3, cat, RenderRole::shape), def("size", 3, ord, RenderRole::size),
                        def("object_color", 6, cat, RenderRole::object_color)},
                       std::string(preset));
  }
  throw std::invalid_argument("unknown space preset '" + std::string(preset) + "'");
}

FactorSpace build_space(std::vector<FactorDef> factors) {
  if (factors.size() < 2) throw std::invalid_argument("explicit factor space needs at least 2 factors");
  return FactorSpace(std::move(factors));
}

std::string_view to_string(FactorKind kind) { return kind == FactorKind::ordinal ? "ordinal" : "categorical"; }

std::string_view to_string(RenderRole role) {
  switch (role) {
    case RenderRole::shape: return "shape";
    case RenderRole::size: return "size";
    case RenderRole::pos_x: return "pos_x";
    case RenderRole::pos_y: return "pos_y";
    case RenderRole::object_color: return "object_color";
    case RenderRole::background_color: return "background_color";
    case RenderRole::wall_color: return "wall_color";
    case RenderRole::none: return "none";
  }
  return "none";
}

FactorKind kind_from_string(std::string_view s) {
  if (s == "categorical") return FactorKind::categorical;
  if (s == "ordinal") return FactorKind::ordinal;
  throw std::invalid_argument("unknown factor kind '" + std::string(s) + "'");
}

RenderRole role_from_string(std::string_view s) {
  for (auto r : {RenderRole::shape, RenderRole::size, RenderRole::pos_x, RenderRole::pos_y, RenderRole::object_color,
                 RenderRole::background_color, RenderRole::wall_color, RenderRole::none})
    if (to_string(r) == s) return r;
  throw std::invalid_argument("unknown render role '" + std::string(s) + "'");
}

FactorSpace space_from_json(const nlohmann::json& j) {
  if (j.contains("preset")) return build_space(j.at("preset").get<std::string>());
  if (!j.contains("factors")) throw std::invalid_argument("space config needs \"preset\" or \"factors\"");
  std::vector<FactorDef> defs;
  for (const auto& f : j.at("factors")) {
    FactorDef d;
    d.name = f.at("name").get<std::string>();
    d.cardinality = f.at("cardinality").get<int>();
    d.kind = kind_from_string(f.value("kind", std::string("categorical")));
    d.render_role = role_from_string(f.value("render_role", std::string("none")));
    defs.push_back(std::move(d));
  }
  return build_space(std::move(defs));
}

nlohmann::json space_to_json(const FactorSpace& space) {
  const auto& presets = preset_names();
  if (std::find(presets.begin(), presets.end(), space.label()) != presets.end() &&
      build_space(space.label()) == space)
    return {{"preset", space.label()}};
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : space.factors())
    factors.push_back({{"name", f.name},
                       {"cardinality", f.cardinality},
                       {"kind", to_string(f.kind)},
                       {"render_role", to_string(f.render_role)}});
  return {{"factors", factors}};
}

FactorSpace load_space(const std::string& preset_or_path) {
  const auto& presets = preset_names();
  if (std::find(presets.begin(), presets.end(), preset_or_path) != presets.end()) return build_space(preset_or_path);
  if (!std::filesystem::exists(preset_or_path))
    throw std::invalid_argument("unknown space preset or missing config file '" + preset_or_path + "'");
  std::ifstream in(preset_or_path);
  return space_from_json(nlohmann::json::parse(in));
}

FactorAssignment sample_assignment(const FactorSpace& space, RngStream& rng) {
  FactorAssignment a;
  a.values.reserve(space.num_factors());
  for (const auto& f : space.factors())
    a.values.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(f.cardinality))));
  return a;
}

std::uint64_t assignment_index(const FactorSpace& space, const FactorAssignment& a) {
  space.check(a);
  std::uint64_t index = 0;
  for (std::size_t k = 0; k < space.num_factors(); ++k)
    index = index * static_cast<std::uint64_t>(space.factor(k).cardinality) + static_cast<std::uint64_t>(a[k]);
  return index;
}

FactorAssignment index_to_assignment(const FactorSpace& space, std::uint64_t index) {
  if (index >= space.total_combinations())
    throw std::out_of_range("index " + std::to_string(index) + " >= total combinations " +
                            std::to_string(space.total_combinations()));
  FactorAssignment a;
  a.values.assign(space.num_factors(), 0);
  for (std::size_t k = space.num_factors(); k-- > 0;) {
    const auto card = static_cast<std::uint64_t>(space.factor(k).cardinality);
    a[k] = static_cast<int>(index % card);
    index /= card;
  }
  return a;
}

}  // namespace raven
