#pragma once

// Frozen-LCB batch construction.
//
// A batch of N evaluations is built from pre-batch information only:
//   1. simulate N/2 sequential steps in the expected-outcome world (every
//      sampled arm observes its own empirical mean) and record the steps at
//      which the expansion rule adds a template;
//   2. give N/2 slots to the pre-batch leader, then pick N/2 challengers one
//      at a time, after each pick updating a shadow copy of the challenger as
//      if it had observed its pre-batch lcb.
// Shadow state is discarded; only the realized outcomes update the run.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/bounds.hpp"
#include "hardspot/oracle.hpp"
#include "hardspot/optimizer.hpp"

namespace hardspot {

struct ScheduledActivation {
  std::size_t step = 0;  // 1-based challenger step at which the arm appears
  TemplateId id;
  bool uniform = true;
};

struct ActivationSchedule {
  std::vector<ScheduledActivation> entries;
};

struct BatchPlan {
  std::vector<TemplateId> entries;
  std::size_t incumbent_share = 0;
  TemplateId leader;
};

/// Outcome fed to simulated updates when building the activation schedule.
enum class ScheduleWorld { expected_mean, frozen_lcb };

namespace detail {

/// Shadow copy of the in-play pool used by all within-batch simulations.
struct Shadow {
  struct Arm {
    std::optional<std::size_t> pool_index;  // nullopt for arms activated mid-batch
    TemplateId id;
    ArmStats stats;
    Bounds bounds;
    double frozen = 0.0;  // pre-batch lcb; 0 for new arms
  };
  std::vector<Arm> arms;
  std::vector<ArmView> views;
  std::size_t n = 0;  // pool size used for shadow bounds

  void set(std::size_t k, ArmStats s, double delta) {
    auto& a = arms[k];
    a.stats = s;
    a.bounds = compute_bounds(s, delta, n);
    views[k].mean = s.mean_or(0.0);
    views[k].lcb = a.bounds.lcb;
    views[k].ucb = a.bounds.ucb;
  }

  std::size_t add(const TemplateId& id, std::uint64_t salt, double penalty) {
    Arm a;
    a.id = id;
    arms.push_back(a);
    ArmView v;
    v.priority = mix64(salt, stable_hash(id));
    v.penalty = penalty;
    v.eligible = true;
    views.push_back(v);
    return arms.size() - 1;
  }
};

inline Shadow make_shadow(Optimizer& opt, std::uint64_t salt,
                          const Optimizer::Penalties& penalties) {
  const auto& st = opt.state();
  Shadow sh;
  sh.n = st.pool.size();
  sh.views = opt.views(salt, penalties.pool);
  sh.arms.resize(st.pool.size());
  for (std::size_t i = 0; i < st.pool.size(); ++i) {
    auto& a = sh.arms[i];
    a.pool_index = i;
    a.id = st.pool[i].id;
    a.stats = st.pool[i].stats;
    a.bounds = st.pool[i].bounds;
    a.frozen = st.pool[i].bounds.lcb;
  }
  return sh;
}

}  // namespace detail

/// Runs `steps` counterfactual sequential steps from a copy of the pool and
/// returns the steps at which the expansion rule admits a new template. New
/// templates are drawn with the run's RNG and surrogate, so they are the ones
/// the batch will really activate; pool statistics are left untouched.
inline ActivationSchedule simulate_activation_schedule(
    Optimizer& opt, std::size_t steps, std::uint64_t salt,
    ScheduleWorld world = ScheduleWorld::expected_mean) {
  const auto& cfg = opt.config();
  auto penalties = opt.penalties();
  auto sh = detail::make_shadow(opt, salt, penalties);
  const double bdelta = cfg.bounds_delta();
  std::uint64_t uniform_count = opt.state().uniform_proposals;
  const std::size_t k = opt.leader_set_size();
  const double lambda = opt.lambda();
  ActivationSchedule schedule;
  std::unordered_set<TemplateId, TemplateIdHash> scheduled;

  for (std::size_t t = 1; t <= steps; ++t) {
    std::optional<std::size_t> inc;
    double max_ucb = 0.0;
    for (std::size_t i = 0; i < sh.views.size(); ++i) {
      if (!sh.views[i].eligible) continue;
      if (!inc || sh.views[i].lcb > sh.views[*inc].lcb) inc = i;
      max_ucb = std::max(max_ucb, sh.views[i].ucb);
    }
    const double eps = inc ? std::max(0.0, max_ucb - sh.views[*inc].lcb) : 0.0;
    const bool room =
        !opt.space_size() || opt.state().pool.size() + scheduled.size() < *opt.space_size();
    if (room && Optimizer::expansion_condition(eps, opt.gamma_for(uniform_count), cfg.c)) {
      auto prop = opt.propose_expansion([&](const TemplateId& id) { return scheduled.count(id) > 0; });
      if (prop) {
        sh.n += 1;
        sh.add(prop->id, salt, penalties.of(penalties.model, opt.space(), prop->id));
        scheduled.insert(prop->id);
        if (prop->uniform) ++uniform_count;
        schedule.entries.push_back({t, std::move(prop->id), prop->uniform});
      }
    }
    auto pair = selection::pair(sh.views, k, lambda);
    if (!pair) continue;
    auto step_update = [&](std::size_t a) {
      const double y = world == ScheduleWorld::expected_mean ? sh.arms[a].stats.mean_or(0.0)
                                                             : sh.arms[a].frozen;
      sh.set(a, ArmStats{sh.arms[a].stats.m + 1, sh.arms[a].stats.total + y}, bdelta);
    };
    step_update(pair->leader);
    if (pair->challenger) step_update(*pair->challenger);
  }
  return schedule;
}

/// Per-step record of a challenger loop.
struct ChallengerStep {
  std::size_t arm = 0;  // shadow index
  double ucb_after = 0.0;
};

/// The challenger half of the batch: `steps` picks from the shadow pool,
/// activating scheduled templates at their steps and updating each pick with
/// `outcome(shadow_arm)`. `excluded` are shadow indices never picked.
/// `on_step` sees the shadow before each update.
template <class Outcome, class OnStep>
std::vector<ChallengerStep> challenger_loop(detail::Shadow& sh, const ActivationSchedule& schedule,
                                            std::size_t steps, std::uint64_t salt,
                                            const std::vector<std::size_t>& excluded,
                                            double lambda, double bounds_delta,
                                            const Optimizer::Penalties& penalties,
                                            const Space& space, Outcome outcome, OnStep on_step) {
  std::vector<ChallengerStep> out;
  std::size_t next = 0;
  for (std::size_t t = 1; t <= steps; ++t) {
    while (next < schedule.entries.size() && schedule.entries[next].step <= t) {
      const auto& e = schedule.entries[next++];
      sh.add(e.id, salt, penalties.of(penalties.model, space, e.id));
    }
    auto ch = selection::challenger(sh.views, excluded, lambda);
    if (!ch) throw std::logic_error("batch construction needs at least two selectable arms");
    on_step(sh, *ch);
    const auto& s = sh.arms[*ch].stats;
    sh.set(*ch, ArmStats{s.m + 1, s.total + outcome(sh.arms[*ch])}, bounds_delta);
    out.push_back({*ch, sh.arms[*ch].bounds.ucb});
  }
  return out;
}

/// Builds an N-slot batch. Odd N is allowed only for a final partial batch;
/// the leader then gets floor(N/2) slots.
inline BatchPlan build_batch(Optimizer& opt, const ActivationSchedule& schedule, std::size_t n,
                             std::uint64_t salt) {
  auto penalties = opt.penalties();
  auto sh = detail::make_shadow(opt, salt, penalties);
  auto pair = selection::pair(sh.views, opt.leader_set_size(), opt.lambda());
  if (!pair) throw std::logic_error("batch construction needs at least one selectable arm");
  BatchPlan plan;
  plan.leader = opt.state().pool[pair->leader].id;
  plan.incumbent_share = n / 2;
  plan.entries.assign(plan.incumbent_share, plan.leader);
  auto picks = challenger_loop(
      sh, schedule, n - plan.incumbent_share, salt, pair->excluded, opt.lambda(),
      opt.config().bounds_delta(), penalties, opt.space(),
      [](const detail::Shadow::Arm& a) { return a.frozen; }, [](const detail::Shadow&, std::size_t) {});
  for (const auto& p : picks) plan.entries.push_back(sh.arms[p.arm].id);
  return plan;
}

/// Deterministic per-request seed: a pure function of run seed, stream, template
/// and the template's draw index.
inline std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t stream, const TemplateId& id,
                                   std::uint64_t draw_index) {
  return mix64(mix64(seed, stream), mix64(stable_hash(id), draw_index));
}

inline constexpr std::uint64_t kRunStream = 1;
inline constexpr std::uint64_t kReevalStream = 2;

struct BatchResult {
  std::vector<std::size_t> arms;  // pool index per slot
  std::vector<Outcome> outcomes;
  std::vector<double> utilities;
};

/// Activates the scheduled templates, evaluates the plan and applies the
/// results in plan order.
inline BatchResult execute_batch(Optimizer& opt, const BatchPlan& plan,
                                 const ActivationSchedule& schedule, Backend& backend,
                                 const UtilitySpec& utility_spec, std::size_t width) {
  auto& st = opt.state();
  for (const auto& e : schedule.entries) {
    if (!opt.contains(e.id)) opt.add_arm(e.id, e.uniform);
  }
  BatchResult r;
  std::vector<EvalRequest> requests;
  std::unordered_map<std::size_t, std::uint64_t> seen;
  for (const auto& id : plan.entries) {
    const std::size_t i = st.index.at(id);
    const std::uint64_t draw = st.pool[i].stats.m + seen[i]++;
    requests.push_back({id, instance_seed(st.seed, kRunStream, id, draw), draw});
    r.arms.push_back(i);
  }
  r.outcomes = backend.evaluate_batch(requests, width);
  if (r.outcomes.size() != requests.size()) throw BackendError("backend returned a short batch");
  for (std::size_t k = 0; k < requests.size(); ++k) {
    const double y = utility(utility_spec, r.outcomes[k], requests[k].id, opt.space());
    r.utilities.push_back(y);
    opt.observe(r.arms[k], y);
  }
  st.budget_used += requests.size();
  opt.refresh();
  return r;
}

// ---------------------------------------------------------------------------
// Guarantee checks

struct G1Check {
  bool event_e = true;       // every in-play arm has lcb <= true mean
  bool violation = false;    // some step's frozen post-update ucb exceeded the expected one
  std::size_t steps = 0;
};

/// Runs the frozen challenger loop from the current state and, at every step,
/// compares the picked arm's post-update ucb under its frozen outcome with the
/// post-update ucb under its true mean, both from the same shadow state.
inline G1Check check_g1(Optimizer& opt, const MeanFunction& mu, const ActivationSchedule& schedule,
                        std::size_t steps, std::uint64_t salt) {
  G1Check c;
  const auto& st = opt.state();
  for (std::size_t i = 0; i < st.pool.size(); ++i) {
    if (opt.in_play(i) && st.pool[i].bounds.lcb > mu(st.pool[i].id)) c.event_e = false;
  }
  auto penalties = opt.penalties();
  auto sh = detail::make_shadow(opt, salt, penalties);
  auto pair = selection::pair(sh.views, opt.leader_set_size(), opt.lambda());
  if (!pair) return c;
  const double bdelta = opt.config().bounds_delta();
  challenger_loop(
      sh, schedule, steps, salt, pair->excluded, opt.lambda(), bdelta, penalties, opt.space(),
      [](const detail::Shadow::Arm& a) { return a.frozen; },
      [&](const detail::Shadow& s, std::size_t k) {
        const auto& a = s.arms[k];
        const double frozen_ucb =
            compute_bounds({a.stats.m + 1, a.stats.total + a.frozen}, bdelta, s.n).ucb;
        const double expected_ucb =
            compute_bounds({a.stats.m + 1, a.stats.total + mu(a.id)}, bdelta, s.n).ucb;
        if (frozen_ucb > expected_ucb) c.violation = true;
        ++c.steps;
      });
  return c;
}

struct G2Check {
  std::vector<TemplateId> real_sequence;
  std::vector<TemplateId> sim_sequence;
  bool contained = false;
  bool strict = false;
  double avg_alloc_real = 0.0;  // mean samples per arm of S_real, expected-outcome world
  double avg_alloc_sim = 0.0;   // same arms, frozen simulation
  bool allocation_ok = true;    // strict containment implies lower average allocation
};

/// Runs the challenger loop twice from the same state, schedule and tie
/// salt: once feeding true means (expected-outcome world), once feeding
/// frozen lcbs (simulation), and compares the sets of arms each samples.
inline G2Check check_g2(Optimizer& opt, const MeanFunction& mu, const ActivationSchedule& schedule,
                        std::size_t steps, std::uint64_t salt) {
  G2Check c;
  auto penalties = opt.penalties();
  const double bdelta = opt.config().bounds_delta();
  auto run_world = [&](bool frozen) {
    auto sh = detail::make_shadow(opt, salt, penalties);
    auto pair = selection::pair(sh.views, opt.leader_set_size(), opt.lambda());
    if (!pair) throw std::logic_error("no selectable arms");
    auto picks = challenger_loop(
        sh, schedule, steps, salt, pair->excluded, opt.lambda(), bdelta, penalties, opt.space(),
        [&](const detail::Shadow::Arm& a) { return frozen ? a.frozen : mu(a.id); },
        [](const detail::Shadow&, std::size_t) {});
    std::vector<TemplateId> seq;
    for (const auto& p : picks) seq.push_back(sh.arms[p.arm].id);
    return seq;
  };
  c.real_sequence = run_world(false);
  c.sim_sequence = run_world(true);
  std::map<TemplateId, std::size_t> real_count;
  std::map<TemplateId, std::size_t> sim_count;
  for (const auto& id : c.real_sequence) ++real_count[id];
  for (const auto& id : c.sim_sequence) ++sim_count[id];
  c.contained = std::all_of(real_count.begin(), real_count.end(),
                            [&](const auto& kv) { return sim_count.count(kv.first) > 0; });
  c.strict = c.contained && sim_count.size() > real_count.size();
  double real_total = 0.0;
  double sim_total = 0.0;
  for (const auto& [id, n] : real_count) {
    real_total += static_cast<double>(n);
    auto it = sim_count.find(id);
    sim_total += it == sim_count.end() ? 0.0 : static_cast<double>(it->second);
  }
  if (!real_count.empty()) {
    c.avg_alloc_real = real_total / static_cast<double>(real_count.size());
    c.avg_alloc_sim = sim_total / static_cast<double>(real_count.size());
  }
  if (c.strict) c.allocation_ok = c.avg_alloc_sim < c.avg_alloc_real;
  return c;
}

}  // namespace hardspot
