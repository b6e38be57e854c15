#pragma once

// Seeded Monte Carlo checks against synthetic environments with known means:
// bound coverage, the two batching guarantees, certification soundness and
// the comparative experiments on planted presets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/batching.hpp"
#include "hardspot/environments.hpp"
#include "hardspot/harness.hpp"

namespace hardspot::verify {

// ---------------------------------------------------------------------------
// Binomial tail

/// P(X >= k) for X ~ Binomial(n, p), summed in log space.
inline double binomial_tail_ge(std::uint64_t n, double p, std::uint64_t k) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  const double lp = std::log(p);
  const double lq = std::log1p(-p);
  const double ln_n1 = std::lgamma(static_cast<double>(n) + 1.0);
  double total = 0.0;
  for (std::uint64_t x = k; x <= n; ++x) {
    const double xd = static_cast<double>(x);
    const double lt = ln_n1 - std::lgamma(xd + 1.0) - std::lgamma(static_cast<double>(n - x) + 1.0) +
                      xd * lp + static_cast<double>(n - x) * lq;
    const double term = std::exp(lt);
    total += term;
    if (xd > static_cast<double>(n) * p && term < total * 1e-17) break;
  }
  return std::min(1.0, total);
}

/// Smallest count c with P(X >= c) <= alpha under Binomial(n, p): observing
/// c or more failures rejects "rate <= p" at level alpha.
inline std::uint64_t binomial_critical(std::uint64_t n, double p, double alpha) {
  std::uint64_t c = static_cast<std::uint64_t>(std::floor(static_cast<double>(n) * p));
  while (c <= n && binomial_tail_ge(n, p, c) > alpha) ++c;
  return c;
}

// ---------------------------------------------------------------------------
// Presets

inline nlohmann::json preset_config(nlohmann::json environment, std::uint64_t seed,
                                    std::uint64_t budget) {
  return {{"environment", std::move(environment)}, {"budget", budget}, {"seed", seed}};
}

inline nlohmann::json needles_env(std::uint64_t layout_seed) {
  return {{"preset", "needles"}, {"layout_seed", layout_seed}};
}

inline nlohmann::json cert_mix_env(std::uint64_t layout_seed) {
  return {{"preset", "cert_mix"}, {"layout_seed", layout_seed}};
}

inline nlohmann::json two_cluster_env(std::uint64_t layout_seed) {
  return {{"preset", "two_cluster"}, {"layout_seed", layout_seed}};
}

/// Seeds used by run index k of experiment `salt`, so experiments draw
/// independent layouts and runs.
inline std::uint64_t run_seed(std::uint64_t experiment, std::uint64_t k) {
  return mix64(experiment, k) >> 16;
}

// ---------------------------------------------------------------------------
// Bound coverage

struct CoverageReport {
  std::uint64_t runs = 0;
  std::uint64_t failures = 0;  // runs where some arm's mean left [lcb, ucb]
  std::uint64_t critical = 0;
  bool pass = false;
};

/// Mini-runs on `arms` Bernoulli arms with seeded means; after every batch
/// each arm's true mean is checked against its current interval.
inline bool coverage_run(std::uint64_t seed, std::size_t arms, std::uint64_t draws, double delta) {
  Rng rng(mix64(seed, 0x636f76ULL));
  std::vector<double> means(arms);
  for (auto& m : means) m = 0.05 + 0.9 * uniform01(rng);
  nlohmann::json env{{"preset", "arms"}, {"means", means}};
  auto cfg = preset_config(env, seed, draws);
  cfg["n0"] = arms;
  cfg["delta"] = delta;
  Session s(parse_run_config(cfg), nullptr);
  s.start();
  bool failed = false;
  auto check = [&](Session& session) {
    for (const auto& a : session.optimizer().state().pool) {
      const double mu = means[static_cast<std::size_t>(a.id.values[0])];
      if (mu < a.bounds.lcb || mu > a.bounds.ucb) failed = true;
    }
  };
  s.run(check);
  return failed;
}

inline CoverageReport bound_coverage(std::uint64_t runs, std::size_t arms = 20,
                                     std::uint64_t draws = 2000, double delta = 0.01,
                                     double alpha = 0.01) {
  CoverageReport r;
  r.runs = runs;
  for (std::uint64_t k = 0; k < runs; ++k) {
    if (coverage_run(run_seed(1, k), arms, draws, delta)) ++r.failures;
  }
  r.critical = binomial_critical(runs, delta, alpha);
  r.pass = r.failures < r.critical;
  return r;
}

// ---------------------------------------------------------------------------
// Batching guarantees on warmed-up needles states

/// A needles session advanced by a seed-dependent number of batches, ready
/// to build its next batch.
struct WarmState {
  std::unique_ptr<Session> session;
  MeanFunction mu;
  ActivationSchedule schedule;
  std::uint64_t salt = 0;
  std::size_t steps = 0;
};

inline WarmState warm_needles(std::uint64_t seed, std::size_t min_batches = 5,
                              std::size_t max_batches = 100) {
  WarmState w;
  auto cfg = parse_run_config(preset_config(needles_env(seed), seed, 20000));
  w.mu = environment_from_json(needles_env(seed)).mean;
  w.session = std::make_unique<Session>(cfg, nullptr);
  w.session->start();
  const std::size_t batches = min_batches + mix64(seed, 0x7761726dULL) % (max_batches - min_batches + 1);
  for (std::size_t b = 0; b < batches; ++b) w.session->step();
  auto& opt = w.session->optimizer();
  opt.update_control_quantities();
  w.session->ensure_selectable();
  w.steps = cfg.batch_size / 2;
  w.salt = opt.state().rng();
  w.schedule = simulate_activation_schedule(opt, w.steps, w.salt);
  return w;
}

struct G1Report {
  std::uint64_t seeds = 0;
  std::uint64_t violations = 0;          // seeds with some frozen ucb above the expected one
  std::uint64_t violations_on_event = 0; // ... while every lcb <= mu
  std::uint64_t event_failures = 0;      // seeds where some lcb > mu
  double delta = 0.01;
  bool pass = false;
};

inline G1Report verify_g1(std::uint64_t seeds, double delta = 0.01) {
  G1Report r;
  r.seeds = seeds;
  r.delta = delta;
  for (std::uint64_t k = 0; k < seeds; ++k) {
    auto w = warm_needles(run_seed(2, k));
    auto c = check_g1(w.session->optimizer(), w.mu, w.schedule, w.steps, w.salt);
    if (!c.event_e) ++r.event_failures;
    if (c.violation) {
      ++r.violations;
      if (c.event_e) ++r.violations_on_event;
    }
  }
  r.pass = r.violations_on_event == 0 &&
           static_cast<double>(r.violations) <= delta * static_cast<double>(seeds);
  return r;
}

struct G2Report {
  std::uint64_t seeds = 0;
  std::uint64_t contained = 0;
  std::uint64_t strict = 0;
  std::uint64_t allocation_failures = 0;
  bool pass = false;
};

inline G2Report verify_g2(std::uint64_t seeds, double delta = 0.01) {
  G2Report r;
  r.seeds = seeds;
  for (std::uint64_t k = 0; k < seeds; ++k) {
    auto w = warm_needles(run_seed(3, k));
    auto c = check_g2(w.session->optimizer(), w.mu, w.schedule, w.steps, w.salt);
    if (c.contained) ++r.contained;
    if (c.strict) ++r.strict;
    if (c.strict && !c.allocation_ok) ++r.allocation_failures;
  }
  r.pass = static_cast<double>(r.contained) >= (1.0 - delta) * static_cast<double>(seeds) &&
           r.allocation_failures == 0;
  return r;
}

/// Hand-traced instance: leader A with three challengers B, C, D on a 4-arm
/// pool, delta 0.01 (0.005 for bounds), ten challenger steps. The frozen
/// simulation should sample CCCCCBCBCB and the true-mean world CCCCCCCCCC.
struct ThreeArmTrace {
  std::string frozen;
  std::string expected;
  bool contained = false;
  bool matches = false;
};

inline ThreeArmTrace three_arm_trace() {
  const std::vector<double> mus{0.9, 0.60, 0.58, 0.55};
  const std::vector<ArmStats> stats{{2000, 1800.0}, {400, 232.0}, {300, 168.0}, {500, 265.0}};
  auto env = explicit_arms(mus);
  OptimizerConfig cfg;
  cfg.n0 = 4;
  cfg.delta = 0.01;
  cfg.use_surrogate = false;
  const Space space(env.space);
  Optimizer opt(space, cfg, 0);
  for (std::size_t k = 0; k < mus.size(); ++k) {
    const auto i = opt.add_arm(TemplateId{{static_cast<double>(k)}}, true);
    auto& a = opt.state().pool[i];
    a.stats = stats[k];
    a.bounds = compute_bounds(a.stats, cfg.bounds_delta(), mus.size());
  }
  opt.state().last_refresh_pool_size = mus.size();
  opt.update_control_quantities();
  auto c = check_g2(opt, env.mean, ActivationSchedule{}, 10, 0);
  auto letters = [](const std::vector<TemplateId>& seq) {
    std::string s;
    for (const auto& id : seq) s += static_cast<char>('A' + static_cast<int>(id.values[0]));
    return s;
  };
  ThreeArmTrace t;
  t.frozen = letters(c.sim_sequence);
  t.expected = letters(c.real_sequence);
  t.contained = c.contained;
  t.matches = t.frozen == "CCCCCBCBCB" && t.expected == "CCCCCCCCCC";
  return t;
}

// ---------------------------------------------------------------------------
// Certification

struct CertifiedSummary {
  std::size_t count = 0;
  double min_mean = std::numeric_limits<double>::infinity();  // true mean
  std::size_t below = 0;  // certified arms whose true mean is below the given level
};

inline CertifiedSummary summarize_certified(const Optimizer& opt, const MeanFunction& mu,
                                            double level) {
  CertifiedSummary s;
  for (std::size_t i : opt.state().certified) {
    const double m = mu(opt.state().pool[i].id);
    ++s.count;
    s.min_mean = std::min(s.min_mean, m);
    if (m < level) ++s.below;
  }
  return s;
}

inline std::unique_ptr<Session> run_preset(nlohmann::json env, std::uint64_t seed,
                                           std::uint64_t budget, nlohmann::json extra = {}) {
  auto cfg = preset_config(std::move(env), seed, budget);
  if (extra.is_object()) {
    for (auto& [k, v] : extra.items()) cfg[k] = v;
  }
  auto s = std::make_unique<Session>(parse_run_config(cfg), nullptr);
  s->start();
  s->run();
  return s;
}

struct SoundnessReport {
  std::uint64_t runs = 0;
  std::uint64_t unsound = 0;  // runs certifying an arm with true mean below tau
  std::uint64_t certified_total = 0;
  bool pass = false;
};

inline SoundnessReport certification_soundness(std::uint64_t runs, double tau = 0.9,
                                               std::uint64_t budget = 20000, double delta = 0.01) {
  SoundnessReport r;
  r.runs = runs;
  for (std::uint64_t k = 0; k < runs; ++k) {
    const auto seed = run_seed(4, k);
    auto s = run_preset(cert_mix_env(seed), seed, budget,
                        {{"certification", {{"kind", "fixed"}, {"tau", tau}}}});
    auto sum = summarize_certified(s->optimizer(), environment_from_json(cert_mix_env(seed)).mean, tau);
    r.certified_total += sum.count;
    if (sum.below > 0) ++r.unsound;
  }
  r.pass = static_cast<double>(r.unsound) <= delta * static_cast<double>(runs);
  return r;
}

struct TradeoffReport {
  std::uint64_t seeds = 0;
  std::uint64_t higher_or_equal_min = 0;  // adaptive min true mean >= fixed min
  std::uint64_t not_more = 0;             // adaptive certified count <= fixed count
  std::uint64_t both = 0;
  double mean_fixed_count = 0.0;
  double mean_adaptive_count = 0.0;
  bool pass = false;
};

/// Fixed vs adaptive certification from the same seeds. A seed counts only if
/// both certified sets are non-empty.
inline TradeoffReport adaptive_tradeoff(std::uint64_t seeds, double tau = 0.9,
                                        std::uint64_t budget = 20000) {
  TradeoffReport r;
  r.seeds = seeds;
  for (std::uint64_t k = 0; k < seeds; ++k) {
    const auto seed = run_seed(5, k);
    const auto mu = environment_from_json(cert_mix_env(seed)).mean;
    auto f = run_preset(cert_mix_env(seed), seed, budget,
                        {{"certification", {{"kind", "fixed"}, {"tau", tau}}}});
    auto a = run_preset(cert_mix_env(seed), seed, budget,
                        {{"certification", {{"kind", "adaptive"}, {"tau", tau}}}});
    auto fs = summarize_certified(f->optimizer(), mu, tau);
    auto as = summarize_certified(a->optimizer(), mu, tau);
    r.mean_fixed_count += static_cast<double>(fs.count);
    r.mean_adaptive_count += static_cast<double>(as.count);
    const bool nonempty = fs.count > 0 && as.count > 0;
    const bool higher = nonempty && as.min_mean >= fs.min_mean;
    const bool fewer = nonempty && as.count <= fs.count;
    r.higher_or_equal_min += higher ? 1 : 0;
    r.not_more += fewer ? 1 : 0;
    r.both += higher && fewer ? 1 : 0;
  }
  r.mean_fixed_count /= static_cast<double>(std::max<std::uint64_t>(seeds, 1));
  r.mean_adaptive_count /= static_cast<double>(std::max<std::uint64_t>(seeds, 1));
  r.pass = static_cast<double>(r.both) >= 0.9 * static_cast<double>(seeds);
  return r;
}

// ---------------------------------------------------------------------------
// COUP vs uniform, and re-evaluation coverage

struct RankedReeval {
  Ranking ranking;
  std::vector<ReevalRow> rows;
  std::vector<CurvePoint> curve;
};

inline RankedReeval rank_and_reevaluate(Session& s, RankBy by, std::size_t top_k,
                                        std::size_t min_samples) {
  RankedReeval out;
  out.ranking = s.optimizer().rank(by);
  const auto extent = reeval_extent(out.ranking, top_k);
  out.rows = reevaluate(s.optimizer(), out.ranking, extent, min_samples, s.backend(),
                        s.config().utility, s.config().parallelism);
  out.curve = report_curve(out.ranking, out.rows);
  return out;
}

struct ComparisonReport {
  std::uint64_t seeds = 0;
  std::uint64_t coup_above = 0;      // COUP cumulative@K > uniform expected@K
  std::uint64_t coup_min_ok = 0;     // COUP running min@K >= uniform expected@K
  double mean_coup = 0.0;
  double mean_uniform = 0.0;
  double mean_coup_min = 0.0;
  // re-evaluation coverage of the COUP runs' top arms
  std::uint64_t reeval_arms = 0;
  std::uint64_t reeval_inside = 0;
  bool pass = false;
  bool coverage_pass = false;
};

inline ComparisonReport coup_vs_uniform(std::uint64_t seeds, std::size_t k = 10,
                                        std::uint64_t budget = 20000, std::size_t top = 100) {
  ComparisonReport r;
  r.seeds = seeds;
  for (std::uint64_t q = 0; q < seeds; ++q) {
    const auto seed = run_seed(6, q);
    auto coup = run_preset(needles_env(seed), seed, budget);
    auto c = rank_and_reevaluate(*coup, RankBy::lcb, top, 200);

    auto ucfg = parse_run_config(preset_config(needles_env(seed), seed, budget));
    Session uni(ucfg, nullptr);
    run_uniform(uni);
    auto u = rank_and_reevaluate(uni, RankBy::mean, k, 200);

    const double coup_avg = c.curve.at(k - 1).cumulative;
    const double coup_min = c.curve.at(k - 1).running_min;
    const double uni_avg = u.curve.at(k - 1).expected;
    r.coup_above += coup_avg > uni_avg ? 1 : 0;
    r.coup_min_ok += coup_min >= uni_avg ? 1 : 0;
    r.mean_coup += coup_avg;
    r.mean_uniform += uni_avg;
    r.mean_coup_min += coup_min;
    for (std::size_t i = 0; i < std::min(top, c.rows.size()); ++i) {
      const auto& b = coup->optimizer().state().pool[c.rows[i].arm].bounds;
      const double m = c.rows[i].mean();
      ++r.reeval_arms;
      if (b.lcb <= m && m <= b.ucb) ++r.reeval_inside;
    }
  }
  const double n = static_cast<double>(std::max<std::uint64_t>(seeds, 1));
  r.mean_coup /= n;
  r.mean_uniform /= n;
  r.mean_coup_min /= n;
  r.pass = static_cast<double>(r.coup_above) >= 0.95 * n &&
           static_cast<double>(r.coup_min_ok) >= 0.80 * n;
  r.coverage_pass = r.reeval_arms > 0 && static_cast<double>(r.reeval_inside) >=
                                             0.99 * static_cast<double>(r.reeval_arms);
  return r;
}

// ---------------------------------------------------------------------------
// Repulsion diversity

struct DiversityReport {
  std::uint64_t seeds = 0;
  std::uint64_t repulsive_both = 0;   // certified set spans both regions
  std::uint64_t plain_both = 0;
  std::uint64_t repulsive_fewer = 0;  // repulsive run certified fewer arms
  double mean_repulsive_count = 0.0;
  double mean_plain_count = 0.0;
  bool pass = false;
};

inline bool spans_both_regions(const Optimizer& opt) {
  bool alpha = false;
  bool beta = false;
  for (std::size_t i : opt.state().certified) {
    (opt.state().pool[i].id.values[0] == 0.0 ? alpha : beta) = true;
  }
  return alpha && beta;
}

inline DiversityReport repulsion_diversity(std::uint64_t seeds, double lambda = 0.1,
                                           double tau = 0.8, std::uint64_t budget = 20000) {
  DiversityReport r;
  r.seeds = seeds;
  for (std::uint64_t q = 0; q < seeds; ++q) {
    const auto seed = run_seed(10, q);
    const nlohmann::json cert{{"kind", "fixed"}, {"tau", tau}};
    auto plain = run_preset(two_cluster_env(seed), seed, budget, {{"certification", cert}});
    auto rep = run_preset(two_cluster_env(seed), seed, budget,
                          {{"certification", cert},
                           {"repulsion", {{"enabled", true}, {"lambda", lambda}}}});
    const auto np = plain->optimizer().state().certified.size();
    const auto nr = rep->optimizer().state().certified.size();
    r.mean_plain_count += static_cast<double>(np);
    r.mean_repulsive_count += static_cast<double>(nr);
    r.plain_both += spans_both_regions(plain->optimizer()) ? 1 : 0;
    r.repulsive_both += spans_both_regions(rep->optimizer()) ? 1 : 0;
    r.repulsive_fewer += nr < np ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::uint64_t>(seeds, 1));
  r.mean_plain_count /= n;
  r.mean_repulsive_count /= n;
  r.pass = static_cast<double>(r.repulsive_both) >= 0.8 * n &&
           static_cast<double>(r.plain_both) <= 0.4 * n &&
           static_cast<double>(r.repulsive_fewer) >= 0.9 * n;
  return r;
}

}  // namespace hardspot::verify
