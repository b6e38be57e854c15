#pragma once

// Synthetic environments with known per-template mean utility. Each pairs a
// space with a mean function usable by SyntheticBackend and by verifiers that
// need ground truth.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/oracle.hpp"
#include "hardspot/rng.hpp"
#include "hardspot/search_space.hpp"

namespace hardspot {

struct Environment {
  std::string name;
  SpaceSpec space;
  MeanFunction mean;
};

struct PlantedGroup {
  std::size_t count = 0;
  double mean = 0.0;
};

namespace detail {

inline SpaceSpec cube_space() {
  SpaceSpec s;
  s.params = {ParamSpec::integer("a", 0, 9), ParamSpec::integer("b", 0, 9),
              ParamSpec::integer("c", 0, 9)};
  return s;
}

inline std::size_t cube_index(const TemplateId& id) {
  return static_cast<std::size_t>(id.values[0]) * 100 +
         static_cast<std::size_t>(id.values[1]) * 10 + static_cast<std::size_t>(id.values[2]);
}

}  // namespace detail

/// 1,000 templates (a,b,c in 0..9). Groups of planted arms sit at positions
/// drawn from `layout_seed`; every other template has `background` mean.
inline Environment planted_environment(std::string name, std::vector<PlantedGroup> groups,
                                       double background, std::uint64_t layout_seed) {
  auto means = std::make_shared<std::vector<double>>(1000, background);
  std::vector<std::size_t> order(1000);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix64(layout_seed, 0x6e656564ULL));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.count && cursor < order.size(); ++k) {
      (*means)[order[cursor++]] = g.mean;
    }
  }
  return {std::move(name), detail::cube_space(),
          [means](const TemplateId& id) { return (*means)[detail::cube_index(id)]; }};
}

/// 10 templates at 0.95 among 1,000; the rest at 0.30.
inline Environment needles(std::uint64_t layout_seed, std::size_t hard = 10,
                           double hard_mean = 0.95, double easy_mean = 0.30) {
  return planted_environment("needles", {{hard, hard_mean}}, easy_mean, layout_seed);
}

/// 10 at 0.95, 10 at 0.85, 980 at 0.30: certification at 0.9 must separate the
/// two planted tiers.
inline Environment certification_mix(std::uint64_t layout_seed) {
  return planted_environment("cert_mix", {{10, 0.95}, {10, 0.85}}, 0.30, layout_seed);
}

/// Two disjoint regions ("alpha" and "beta"), each a 25x20 grid of templates.
/// Each region holds a compact block of hard templates. Alpha's block is
/// larger and harder; beta's arms sit just inside the 0.1 repulsion margin
/// below alpha, and need roughly three times the samples to clear 0.8.
struct TwoClusterLayout {
  std::size_t alpha_hard = 60;
  double alpha_mean = 0.99;
  std::size_t beta_hard = 40;
  double beta_mean = 0.90;
  double background = 0.15;
};

inline Environment two_cluster(std::uint64_t layout_seed, TwoClusterLayout layout = {}) {
  SpaceSpec s;
  s.params = {ParamSpec::categorical("region", {"alpha", "beta"}), ParamSpec::integer("x", 0, 24),
              ParamSpec::integer("y", 0, 19)};
  auto means = std::make_shared<std::vector<double>>(1000, layout.background);
  Rng rng(mix64(layout_seed, 0x636c7573ULL));
  // A block of `count` hard templates laid out row-major from a random corner,
  // 4 wide.
  auto place = [&](std::size_t region, std::size_t count, double mean) {
    const std::uint64_t x0 = uniform_index(rng, 25 - 4);
    const std::uint64_t rows = (count + 3) / 4;
    const std::uint64_t y0 = uniform_index(rng, 20 - rows);
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t x = x0 + k % 4;
      std::size_t y = y0 + k / 4;
      (*means)[region * 500 + x * 20 + y] = mean;
    }
  };
  place(0, layout.alpha_hard, layout.alpha_mean);
  place(1, layout.beta_hard, layout.beta_mean);
  return {"two_cluster", std::move(s), [means](const TemplateId& id) {
            auto idx = static_cast<std::size_t>(id.values[0]) * 500 +
                       static_cast<std::size_t>(id.values[1]) * 20 +
                       static_cast<std::size_t>(id.values[2]);
            return (*means)[idx];
          }};
}

/// One categorical parameter "arm" whose k-th level has mean means[k].
inline Environment explicit_arms(std::vector<double> means) {
  if (means.empty()) throw SpaceError("explicit arms need at least one mean");
  std::vector<std::string> levels;
  for (std::size_t k = 0; k < means.size(); ++k) levels.push_back("arm" + std::to_string(k));
  SpaceSpec s;
  s.params = {ParamSpec::categorical("arm", std::move(levels))};
  auto table = std::make_shared<std::vector<double>>(std::move(means));
  return {"arms", std::move(s),
          [table](const TemplateId& id) { return (*table)[static_cast<std::size_t>(id.values[0])]; }};
}

/// Mean given by an expression over the space's parameters, clipped to [0,1].
inline Environment expression_environment(std::string name, SpaceSpec spec,
                                          const std::string& mean_expression) {
  auto space = std::make_shared<Space>(spec);
  auto e = std::make_shared<expr::Expression>(expr::Expression::parse(mean_expression));
  std::vector<std::size_t> slots;
  for (const auto& ident : e->identifiers()) {
    auto idx = space->index_of(ident);
    if (!idx) throw SpaceError("mean expression references unknown parameter '" + ident + "'");
    slots.push_back(*idx);
  }
  return {std::move(name), std::move(spec), [space, e, slots](const TemplateId& id) {
            double v = e->evaluate_number(
                [&](std::size_t slot) { return space->expression_value(id, slots[slot]); });
            return std::clamp(v, 0.0, 1.0);
          }};
}

/// DAG-reasoning-shaped environment: deeper, narrower arithmetic DAGs are harder.
inline Environment dag_reasoning_environment() {
  return expression_environment(
      "dag_reasoning", spaces::dag_reasoning({"!(depth > 8 && children > 3)"}),
      "0.05 + 0.09 * (depth - 2) - 0.08 * (children - 2) + 0.2 * (dataset == \"arithmetic\")"
      " - 0.03 * extra_links + 0.02 * perturbations");
}

/// Builds a named environment from its config form, e.g.
/// {"preset": "needles", "layout_seed": 3}.
inline Environment environment_from_json(const nlohmann::json& j) {
  const std::string preset = j.at("preset").get<std::string>();
  const std::uint64_t layout = j.value("layout_seed", std::uint64_t{0});
  if (preset == "needles") {
    return needles(layout, j.value("hard_count", std::size_t{10}), j.value("hard_mean", 0.95),
                   j.value("easy_mean", 0.30));
  }
  if (preset == "cert_mix") return certification_mix(layout);
  if (preset == "two_cluster") {
    TwoClusterLayout l;
    l.alpha_hard = j.value("alpha_hard", l.alpha_hard);
    l.alpha_mean = j.value("alpha_mean", l.alpha_mean);
    l.beta_hard = j.value("beta_hard", l.beta_hard);
    l.beta_mean = j.value("beta_mean", l.beta_mean);
    l.background = j.value("background", l.background);
    return two_cluster(layout, l);
  }
  if (preset == "planted") {
    std::vector<PlantedGroup> groups;
    for (const auto& g : j.at("groups")) {
      groups.push_back({g.at("count").get<std::size_t>(), g.at("mean").get<double>()});
    }
    return planted_environment("planted", std::move(groups), j.value("background", 0.3), layout);
  }
  if (preset == "dag_reasoning") return dag_reasoning_environment();
  if (preset == "arms") return explicit_arms(j.at("means").get<std::vector<double>>());
  throw SpaceError("unknown environment preset '" + preset + "'");
}

}  // namespace hardspot
