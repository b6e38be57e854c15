#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/expression.hpp"
#include "hardspot/rng.hpp"

namespace hardspot {

class SpaceError : public std::runtime_error {
 public:
  explicit SpaceError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  explicit SpaceError(const std::string& problem) : SpaceError(std::vector{problem}) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> problems_;
};

enum class ParamKind { categorical, integer, continuous };

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::integer;
  std::vector<std::string> levels;  // categorical only
  double lo = 0.0;                  // integer and continuous, inclusive
  double hi = 0.0;

  static ParamSpec categorical(std::string name, std::vector<std::string> levels) {
    return {std::move(name), ParamKind::categorical, std::move(levels), 0.0, 0.0};
  }
  static ParamSpec integer(std::string name, std::int64_t lo, std::int64_t hi) {
    return {std::move(name), ParamKind::integer, {}, static_cast<double>(lo),
            static_cast<double>(hi)};
  }
  static ParamSpec continuous(std::string name, double lo, double hi) {
    return {std::move(name), ParamKind::continuous, {}, lo, hi};
  }

  bool discrete() const noexcept { return kind != ParamKind::continuous; }

  /// Number of values for discrete kinds; 1 for continuous.
  std::uint64_t cardinality() const noexcept {
    switch (kind) {
      case ParamKind::categorical: return levels.size();
      case ParamKind::integer:
        return hi < lo ? 0 : static_cast<std::uint64_t>(hi - lo) + 1;
      case ParamKind::continuous: return 1;
    }
    return 0;
  }

  std::size_t feature_width() const noexcept {
    return kind == ParamKind::categorical ? levels.size() : 1;
  }
};

struct SpaceSpec {
  std::vector<ParamSpec> params;
  std::vector<std::string> constraints;
};

/// A point of the template space. Values follow the parameter order of the
/// owning space; categorical values are stored as level indices.
struct TemplateId {
  std::vector<double> values;

  friend bool operator==(const TemplateId&, const TemplateId&) = default;
  friend auto operator<=>(const TemplateId&, const TemplateId&) = default;
};

struct TemplateIdHash {
  std::size_t operator()(const TemplateId& id) const noexcept {
    std::uint64_t h = 0x51ed270b27a1f0c3ULL;
    for (double v : id.values) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h, bits);
    }
    return static_cast<std::size_t>(h);
  }
};

inline std::uint64_t stable_hash(const TemplateId& id) noexcept {
  return static_cast<std::uint64_t>(TemplateIdHash{}(id));
}

/// Returns every violated invariant of `spec`; empty means valid. The
/// feasibility of the discrete projection is checked separately by Space.
inline std::vector<std::string> validate_space(const SpaceSpec& spec) {
  std::vector<std::string> errors;
  std::unordered_set<std::string> names;
  if (spec.params.empty()) errors.emplace_back("space declares no parameters");
  for (const auto& p : spec.params) {
    if (p.name.empty()) errors.emplace_back("parameter with empty name");
    if (!names.insert(p.name).second) errors.push_back("duplicate parameter name '" + p.name + "'");
    switch (p.kind) {
      case ParamKind::categorical:
        if (p.levels.empty()) errors.push_back("empty categorical '" + p.name + "'");
        break;
      case ParamKind::integer:
        if (p.lo != std::floor(p.lo) || p.hi != std::floor(p.hi)) {
          errors.push_back("non-integer bounds on integer parameter '" + p.name + "'");
        }
        [[fallthrough]];
      case ParamKind::continuous:
        if (!(p.lo <= p.hi)) errors.push_back("inverted range on '" + p.name + "'");
        break;
    }
  }
  for (const auto& c : spec.constraints) {
    try {
      auto e = expr::Expression::parse(c);
      for (const auto& ident : e.identifiers()) {
        if (!names.contains(ident)) {
          errors.push_back("constraint references unknown name '" + ident + "': " + c);
        }
      }
    } catch (const expr::ExpressionError& ex) {
      errors.push_back(std::string("bad constraint: ") + ex.what());
    }
  }
  return errors;
}

/// A validated, immutable template space.
class Space {
 public:
  static constexpr std::uint64_t kDefaultEnumerationCap = 10'000'000;
  static constexpr int kDefaultSampleAttempts = 10'000;

  explicit Space(SpaceSpec spec, std::uint64_t enumeration_cap = kDefaultEnumerationCap)
      : spec_(std::move(spec)) {
    auto errors = validate_space(spec_);
    if (!errors.empty()) throw SpaceError(std::move(errors));
    for (const auto& text : spec_.constraints) {
      Constraint c{expr::Expression::parse(text), {}};
      for (const auto& ident : c.expression.identifiers()) {
        c.slots.push_back(index_of(ident).value());
      }
      constraints_.push_back(std::move(c));
    }
    for (const auto& p : spec_.params) feature_dim_ += p.feature_width();
    if (!feasible(enumeration_cap)) {
      throw SpaceError("no assignment of the discrete parameters satisfies the constraints");
    }
  }

  const SpaceSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return spec_.params.size(); }
  const ParamSpec& param(std::size_t i) const { return spec_.params.at(i); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < spec_.params.size(); ++i) {
      if (spec_.params[i].name == name) return i;
    }
    return std::nullopt;
  }

  bool has_continuous() const noexcept {
    return std::ranges::any_of(spec_.params, [](const auto& p) { return !p.discrete(); });
  }

  /// Product of discrete cardinalities (saturating at uint64 max).
  std::uint64_t unconstrained_product() const noexcept {
    std::uint64_t prod = 1;
    for (const auto& p : spec_.params) {
      std::uint64_t k = p.cardinality();
      if (k != 0 && prod > std::numeric_limits<std::uint64_t>::max() / k) {
        return std::numeric_limits<std::uint64_t>::max();
      }
      prod *= k;
    }
    return prod;
  }

  /// Value of parameter `i` as seen by expressions.
  expr::Value expression_value(const TemplateId& id, std::size_t i) const {
    const auto& p = spec_.params[i];
    double v = id.values.at(i);
    if (p.kind == ParamKind::categorical) return p.levels.at(static_cast<std::size_t>(v));
    return v;
  }

  bool satisfies(const TemplateId& id) const {
    for (const auto& c : constraints_) {
      auto lookup = [&](std::size_t slot) { return expression_value(id, c.slots[slot]); };
      if (!c.expression.evaluate_bool(lookup)) return false;
    }
    return true;
  }

  bool in_domain(const TemplateId& id) const {
    if (id.values.size() != spec_.params.size()) return false;
    for (std::size_t i = 0; i < spec_.params.size(); ++i) {
      const auto& p = spec_.params[i];
      double v = id.values[i];
      if (!std::isfinite(v) || v < (p.kind == ParamKind::categorical ? 0.0 : p.lo)) return false;
      switch (p.kind) {
        case ParamKind::categorical:
          if (v != std::floor(v) || v >= static_cast<double>(p.levels.size())) return false;
          break;
        case ParamKind::integer:
          if (v != std::floor(v) || v > p.hi) return false;
          break;
        case ParamKind::continuous:
          if (v > p.hi) return false;
          break;
      }
    }
    return true;
  }

  bool contains(const TemplateId& id) const { return in_domain(id) && satisfies(id); }

  /// Number of constraint-satisfying assignments of the discrete parameters.
  std::uint64_t count_discrete(std::uint64_t cap = kDefaultEnumerationCap) const {
    std::uint64_t count = 0;
    enumerate_discrete(cap, [&](const TemplateId&) {
      ++count;
      return true;
    });
    return count;
  }

  /// Visits every valid discrete assignment (continuous params pinned at lo)
  /// until `visit` returns false.
  template <class Visit>
  void enumerate_discrete(std::uint64_t cap, Visit&& visit) const {
    if (unconstrained_product() > cap) {
      throw SpaceError("discrete product " + std::to_string(unconstrained_product()) +
                       " exceeds the enumeration cap " + std::to_string(cap));
    }
    for (const auto& c : constraints_) {
      for (std::size_t slot : c.slots) {
        if (!spec_.params[slot].discrete()) {
          throw SpaceError("constraint '" + c.expression.text() +
                           "' depends on continuous parameter '" + spec_.params[slot].name + "'");
        }
      }
    }
    TemplateId id;
    id.values.resize(spec_.params.size());
    std::vector<std::uint64_t> digit(spec_.params.size(), 0);
    for (std::size_t i = 0; i < spec_.params.size(); ++i) id.values[i] = value_at(i, 0);
    for (;;) {
      if (satisfies(id) && !visit(std::as_const(id))) return;
      std::size_t i = 0;
      for (; i < digit.size(); ++i) {
        if (!spec_.params[i].discrete()) continue;
        if (++digit[i] < spec_.params[i].cardinality()) {
          id.values[i] = value_at(i, digit[i]);
          break;
        }
        digit[i] = 0;
        id.values[i] = value_at(i, 0);
      }
      if (i == digit.size()) return;
    }
  }

  /// Uniform draw over valid templates by rejection over the unconstrained
  /// product.
  TemplateId sample_uniform(Rng& rng, int max_attempts = kDefaultSampleAttempts) const {
    TemplateId id;
    id.values.resize(spec_.params.size());
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      for (std::size_t i = 0; i < spec_.params.size(); ++i) {
        const auto& p = spec_.params[i];
        if (p.kind == ParamKind::continuous) {
          id.values[i] = p.lo + (p.hi - p.lo) * uniform01(rng);
        } else {
          id.values[i] = value_at(i, uniform_index(rng, p.cardinality()));
        }
      }
      if (satisfies(id)) return id;
    }
    throw SpaceError("rejection sampling exceeded " + std::to_string(max_attempts) +
                     " attempts; constraints are nearly infeasible");
  }

  /// Fixed-length numeric encoding: numbers pass through, categoricals are
  /// one-hot.
  std::vector<double> encode_features(const TemplateId& id) const {
    if (!in_domain(id)) throw SpaceError("template is not in the space: " + describe(id));
    std::vector<double> out;
    out.reserve(feature_dim_);
    for (std::size_t i = 0; i < spec_.params.size(); ++i) {
      const auto& p = spec_.params[i];
      if (p.kind == ParamKind::categorical) {
        for (std::size_t l = 0; l < p.levels.size(); ++l) {
          out.push_back(static_cast<double>(l) == id.values[i] ? 1.0 : 0.0);
        }
      } else {
        out.push_back(id.values[i]);
      }
    }
    return out;
  }

  nlohmann::json to_json(const TemplateId& id) const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < spec_.params.size(); ++i) {
      const auto& p = spec_.params[i];
      switch (p.kind) {
        case ParamKind::categorical:
          j[p.name] = p.levels.at(static_cast<std::size_t>(id.values[i]));
          break;
        case ParamKind::integer: j[p.name] = static_cast<std::int64_t>(id.values[i]); break;
        case ParamKind::continuous: j[p.name] = id.values[i]; break;
      }
    }
    return j;
  }

  TemplateId from_json(const nlohmann::json& j) const {
    TemplateId id;
    for (const auto& p : spec_.params) {
      if (!j.contains(p.name)) throw SpaceError("template is missing parameter '" + p.name + "'");
      const auto& v = j.at(p.name);
      if (p.kind == ParamKind::categorical) {
        auto it = std::ranges::find(p.levels, v.get<std::string>());
        if (it == p.levels.end()) {
          throw SpaceError("unknown level '" + v.get<std::string>() + "' for '" + p.name + "'");
        }
        id.values.push_back(static_cast<double>(it - p.levels.begin()));
      } else {
        id.values.push_back(v.get<double>());
      }
    }
    if (!contains(id)) throw SpaceError("template is not in the space: " + j.dump());
    return id;
  }

  std::string describe(const TemplateId& id) const {
    std::string out;
    for (std::size_t i = 0; i < id.values.size() && i < spec_.params.size(); ++i) {
      if (!out.empty()) out += ',';
      const auto& p = spec_.params[i];
      out += p.name + '=';
      if (p.kind == ParamKind::categorical && id.values[i] >= 0 &&
          id.values[i] < static_cast<double>(p.levels.size())) {
        out += p.levels[static_cast<std::size_t>(id.values[i])];
      } else if (p.kind == ParamKind::continuous) {
        out += std::to_string(id.values[i]);
      } else {
        out += std::to_string(static_cast<std::int64_t>(id.values[i]));
      }
    }
    return out;
  }

 private:
  struct Constraint {
    expr::Expression expression;
    std::vector<std::size_t> slots;  // identifier slot -> parameter index
  };

  double value_at(std::size_t i, std::uint64_t k) const {
    const auto& p = spec_.params[i];
    switch (p.kind) {
      case ParamKind::categorical: return static_cast<double>(k);
      case ParamKind::integer: return p.lo + static_cast<double>(k);
      case ParamKind::continuous: return p.lo;
    }
    return 0.0;
  }

  bool feasible(std::uint64_t cap) const {
    if (constraints_.empty()) return true;
    bool continuous_in_constraints = false;
    for (const auto& c : constraints_) {
      for (std::size_t slot : c.slots) continuous_in_constraints |= !spec_.params[slot].discrete();
    }
    if (!continuous_in_constraints && unconstrained_product() <= cap) {
      bool found = false;
      enumerate_discrete(cap, [&](const TemplateId&) {
        found = true;
        return false;
      });
      return found;
    }
    Rng rng(0x5eed);
    try {
      (void)sample_uniform(rng);
      return true;
    } catch (const SpaceError&) {
      return false;
    }
  }

  SpaceSpec spec_;
  std::vector<Constraint> constraints_;
  std::size_t feature_dim_ = 0;
};

// Config-file form of a space: {"params": [...], "constraints": [...]} with
// kinds "categorical" | "int" | "float".
inline SpaceSpec space_spec_from_json(const nlohmann::json& j) {
  SpaceSpec spec;
  for (const auto& pj : j.at("params")) {
    std::string kind = pj.at("kind").get<std::string>();
    std::string name = pj.at("name").get<std::string>();
    if (kind == "categorical") {
      spec.params.push_back(
          ParamSpec::categorical(name, pj.at("levels").get<std::vector<std::string>>()));
    } else if (kind == "int") {
      spec.params.push_back(
          ParamSpec::integer(name, pj.at("lo").get<std::int64_t>(), pj.at("hi").get<std::int64_t>()));
    } else if (kind == "float") {
      spec.params.push_back(
          ParamSpec::continuous(name, pj.at("lo").get<double>(), pj.at("hi").get<double>()));
    } else {
      throw SpaceError("unknown parameter kind '" + kind + "' for '" + name + "'");
    }
  }
  if (j.contains("constraints")) {
    spec.constraints = j.at("constraints").get<std::vector<std::string>>();
  }
  return spec;
}

inline nlohmann::json space_spec_to_json(const SpaceSpec& spec) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : spec.params) {
    nlohmann::json pj{{"name", p.name}};
    switch (p.kind) {
      case ParamKind::categorical:
        pj["kind"] = "categorical";
        pj["levels"] = p.levels;
        break;
      case ParamKind::integer:
        pj["kind"] = "int";
        pj["lo"] = static_cast<std::int64_t>(p.lo);
        pj["hi"] = static_cast<std::int64_t>(p.hi);
        break;
      case ParamKind::continuous:
        pj["kind"] = "float";
        pj["lo"] = p.lo;
        pj["hi"] = p.hi;
        break;
    }
    params.push_back(std::move(pj));
  }
  return {{"params", params}, {"constraints", spec.constraints}};
}

// Parameter schemas of the three benchmark families the tool was built for.
// Question content is not modelled; only the identifier space.
namespace spaces {

/// Six-parameter DAG-reasoning space (5*9*3*4*4*3 = 6480 raw templates). The
/// published forbidden-combination rule is not known; `constraints` lets a
/// caller supply one.
inline SpaceSpec dag_reasoning(std::vector<std::string> constraints = {}) {
  SpaceSpec s;
  s.params = {
      ParamSpec::categorical("dataset", {"arithmetic", "linear_equation", "bool_logic",
                                         "deductive_logic", "abductive_logic"}),
      ParamSpec::integer("depth", 2, 10),
      ParamSpec::integer("children", 2, 4),
      ParamSpec::integer("extra_links", 0, 3),
      ParamSpec::integer("perturbations", 0, 3),
      ParamSpec::categorical("order", {"topological", "reversed", "random"}),
  };
  s.constraints = std::move(constraints);
  return s;
}

/// Mixed discrete/continuous grid-puzzle space.
inline SpaceSpec grid_reasoning() {
  SpaceSpec s;
  s.params = {
      ParamSpec::categorical("task", {"shortest_path", "largest_island"}),
      ParamSpec::integer("rows", 5, 25),
      ParamSpec::integer("cols", 5, 25),
      ParamSpec::integer("islands_min", 1, 10),
      ParamSpec::integer("islands_max", 1, 10),
      ParamSpec::continuous("p_blocked", 0.0, 0.5),
  };
  s.constraints = {"islands_min <= islands_max"};
  return s;
}

}  // namespace spaces

}  // namespace hardspot
