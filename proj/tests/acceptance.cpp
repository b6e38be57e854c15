// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 2 3`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "hardspot/hardspot.hpp"

namespace {

using namespace hardspot;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict coverage() {
  auto r = verify::bound_coverage(10000);
  return {r.pass, fmt("%llu/%llu runs with an exit, reject at >= %llu",
                      (unsigned long long)r.failures, (unsigned long long)r.runs,
                      (unsigned long long)r.critical)};
}

Verdict g1() {
  auto r = verify::verify_g1(1000);
  return {r.pass, fmt("violations %llu (on event E %llu), seeds outside E %llu, of %llu",
                      (unsigned long long)r.violations, (unsigned long long)r.violations_on_event,
                      (unsigned long long)r.event_failures, (unsigned long long)r.seeds)};
}

Verdict g2() {
  auto r = verify::verify_g2(500);
  auto t = verify::three_arm_trace();
  const bool ok = r.pass && t.matches && t.contained;
  return {ok, fmt("contained %llu/%llu, strict %llu, allocation failures %llu; 3-arm frozen %s expected %s",
                  (unsigned long long)r.contained, (unsigned long long)r.seeds,
                  (unsigned long long)r.strict, (unsigned long long)r.allocation_failures,
                  t.frozen.c_str(), t.expected.c_str())};
}

Verdict soundness() {
  auto r = verify::certification_soundness(1000);
  return {r.pass, fmt("%llu/%llu runs certified an arm below 0.9; %llu arms certified in total",
                      (unsigned long long)r.unsound, (unsigned long long)r.runs,
                      (unsigned long long)r.certified_total)};
}

Verdict tradeoff() {
  auto r = verify::adaptive_tradeoff(100);
  return {r.pass, fmt("both conditions %llu/%llu (min-mean %llu, count %llu); mean certified fixed %.2f adaptive %.2f",
                      (unsigned long long)r.both, (unsigned long long)r.seeds,
                      (unsigned long long)r.higher_or_equal_min, (unsigned long long)r.not_more,
                      r.mean_fixed_count, r.mean_adaptive_count)};
}

verify::ComparisonReport& comparison() {
  static auto r = verify::coup_vs_uniform(100);
  return r;
}

Verdict coup_beats_uniform() {
  const auto& r = comparison();
  return {r.pass, fmt("above uniform %llu/100, running-min ok %llu/100; mean top-10 COUP %.4f (min %.4f) uniform %.4f",
                      (unsigned long long)r.coup_above, (unsigned long long)r.coup_min_ok,
                      r.mean_coup, r.mean_coup_min, r.mean_uniform)};
}

Verdict determinism() {
  // B = 20: every batch gives the leader 10 slots.
  auto cfg_json = verify::preset_config(verify::needles_env(7), 7, 2000);
  auto trace_of = [&](const nlohmann::json& j, std::vector<std::size_t>* shares) {
    MemoryTrace sink;
    Session s(parse_run_config(j), &sink);
    s.start();
    s.run([&](Session& session) {
      if (shares && session.last_plan().entries.size() == 20) {
        shares->push_back(session.last_plan().incumbent_share);
      }
    });
    return sink.text();
  };
  std::vector<std::size_t> shares;
  const auto a = trace_of(cfg_json, &shares);
  const auto b = trace_of(cfg_json, nullptr);
  const bool share_ok = !shares.empty() && std::all_of(shares.begin(), shares.end(),
                                                       [](std::size_t s) { return s == 10; });
  const bool identical = a == b;

  // B = 2 on a scripted backend against the unbatched reference loop.
  auto env = environment_from_json(nlohmann::json{{"preset", "needles"}, {"layout_seed", 11}});
  const Space space(env.space);
  ScriptedBackend::Table table;
  SyntheticBackend gen(env.mean, 99);
  space.enumerate_discrete(2000, [&](const TemplateId& id) {
    auto& v = table[id];
    for (std::uint64_t d = 0; d < 400; ++d) v.push_back(gen.evaluate(EvalRequest{id, mix64(d, 5), d}));
    return true;
  });
  nlohmann::json small = verify::preset_config(nlohmann::json{{"preset", "needles"}, {"layout_seed", 11}}, 13, 600);
  small["batch_size"] = 2;
  small["n0"] = 10;
  std::string batched_trace;
  nlohmann::json batched_state;
  {
    MemoryTrace sink;
    auto backend = std::make_shared<ScriptedBackend>(table);
    Session s(parse_run_config(small), &sink, backend);
    s.start();
    s.run();
    batched_state = s.optimizer().state_to_json();
  }
  nlohmann::json seq_state;
  std::size_t pairs = 0;
  {
    auto backend = std::make_shared<ScriptedBackend>(table);
    Session s(parse_run_config(small), nullptr, backend);
    s.start();
    pairs = run_sequential_reference(s).size();
    seq_state = s.optimizer().state_to_json();
  }
  const bool equivalent = batched_state == seq_state && pairs > 0;
  return {share_ok && identical && equivalent,
          fmt("leader slots always 10: %s (%zu batches); traces identical: %s (%zu bytes); B=2 equals sequential: %s (%zu steps)",
              share_ok ? "yes" : "no", shares.size(), identical ? "yes" : "no", a.size(),
              equivalent ? "yes" : "no", pairs)};
}

Verdict utilities() {
  const Space space(spaces::dag_reasoning());
  Rng rng(1);
  auto id_for = [&](double depth, double children) {
    TemplateId id = space.sample_uniform(rng);
    id.values[*space.index_of("depth")] = depth;
    id.values[*space.index_of("children")] = children;
    return id;
  };
  const auto cwe = UtilitySpec::complexity_weighted();
  const auto er = UtilitySpec::error_rate();
  const double a = utility(cwe, Outcome::graded(false), id_for(10, 2), space);
  const double b = utility(cwe, Outcome::graded(false), id_for(2, 2), space);
  const double c = utility(er, Outcome::failed(Failure::generation_failure), id_for(5, 3), space);
  const bool ok = a == 0.1 && b == 0.5 && c == 0.0;
  return {ok, fmt("CWE(10,2) = %.17g, CWE(2,2) = %.17g, failure under error rate = %.17g", a, b, c)};
}

Verdict delta_allocation() {
  const double d = per_arm_delta(0.01, 50, 1);
  const double expected = 0.01 / (26.71 * 2500.0);
  bool quarter = true;
  for (std::uint64_t m = 1; m <= 4096; m *= 2) {
    quarter = quarter && per_arm_delta(0.01, 50, 2 * m) == per_arm_delta(0.01, 50, m) / 4.0;
  }
  return {d == expected && quarter,
          fmt("per_arm_delta(0.01,50,1) = %.17g (expected %.17g); doubling m quarters delta_i: %s", d,
              expected, quarter ? "yes" : "no")};
}

Verdict diversity() {
  auto r = verify::repulsion_diversity(100);
  return {r.pass, fmt("both clusters: repulsive %llu/100, plain %llu/100; repulsive fewer %llu/100; mean certified repulsive %.2f plain %.2f",
                      (unsigned long long)r.repulsive_both, (unsigned long long)r.plain_both,
                      (unsigned long long)r.repulsive_fewer, r.mean_repulsive_count,
                      r.mean_plain_count)};
}

Verdict reeval_coverage() {
  const auto& r = comparison();
  return {r.coverage_pass, fmt("%llu/%llu re-evaluated means inside the original interval",
                               (unsigned long long)r.reeval_inside, (unsigned long long)r.reeval_arms)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"bound coverage", coverage},
      {"frozen-lcb ucb dominance (G1)", g1},
      {"schedule containment (G2)", g2},
      {"certification soundness", soundness},
      {"adaptive vs fixed certification", tradeoff},
      {"COUP beats uniform", coup_beats_uniform},
      {"batch determinism and structure", determinism},
      {"utility formulas", utilities},
      {"per-arm delta allocation", delta_allocation},
      {"repulsion diversity", diversity},
      {"re-evaluation coverage", reeval_coverage},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    const auto t0 = Clock::now();
    Verdict o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("criterion %2zu %s: %s [%s] (%.1fs)\n", k + 1, o.pass ? "PASS" : "FAIL",
                criteria[k].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
