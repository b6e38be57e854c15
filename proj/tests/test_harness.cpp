#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <gtest/gtest.h>

#include "hardspot/harness.hpp"
#include "hardspot/verify.hpp"

using namespace hardspot;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hardspot_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json needles_config(std::uint64_t seed, std::uint64_t budget) {
  return verify::preset_config(verify::needles_env(seed), seed, budget);
}

// Counts every evaluation passed through to the wrapped backend.
class CountingBackend final : public Backend {
 public:
  explicit CountingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  Outcome evaluate(const EvalRequest& r) override {
    ++calls;
    return inner_->evaluate(r);
  }
  std::uint64_t calls = 0;

 private:
  std::shared_ptr<Backend> inner_;
};

// Scripted outcomes for explicit arms: draw d of arm k is correct unless
// (d * 7 + k) % 10 < 10 * error[k].
nlohmann::json scripted_table(const std::vector<double>& error, std::size_t draws) {
  const Space space(explicit_arms(error).space);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < error.size(); ++k) {
    nlohmann::json outcomes = nlohmann::json::array();
    for (std::size_t d = 0; d < draws; ++d) {
      const bool wrong = static_cast<double>((d * 7 + k) % 10) < 10 * error[k];
      outcomes.push_back(outcome_to_json(Outcome::graded(!wrong)));
    }
    rows.push_back({{"template", space.to_json(TemplateId{{static_cast<double>(k)}})},
                    {"outcomes", outcomes}});
  }
  return rows;
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" HARDSPOT_SOURCE_DIR "' && " + env + " '" HARDSPOT_CLI "' " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Run, FullBudgetMakesThousandBatches) {
  Session s(parse_run_config(needles_config(1, 20000)), nullptr);
  s.start();
  s.run();
  EXPECT_EQ(s.optimizer().state().batches, 1000u);
  EXPECT_EQ(s.optimizer().state().budget_used, 20000u);
}

TEST(Run, ZeroBudgetOnlyInitialises) {
  MemoryTrace trace;
  Session s(parse_run_config(needles_config(1, 0)), &trace);
  s.start();
  s.run();
  std::set<std::string> types;
  for (const auto& l : trace.lines()) types.insert(nlohmann::json::parse(l)["type"].get<std::string>());
  EXPECT_EQ(types, (std::set<std::string>{"header", "arm_added", "finished"}));
  EXPECT_EQ(s.optimizer().state().budget_used, 0u);
}

TEST(Run, ScriptedRunsAreByteIdentical) {
  const std::vector<double> error{0.9, 0.6, 0.5, 0.3, 0.2, 0.1};
  nlohmann::json cfg{{"environment", {{"preset", "arms"}, {"means", error}}},
                     {"backend", {{"kind", "scripted"}, {"outcomes", scripted_table(error, 600)}}},
                     {"budget", 600},
                     {"n0", 6},
                     {"seed", 2}};
  MemoryTrace a;
  MemoryTrace b;
  Session sa(parse_run_config(cfg), &a);
  Session sb(parse_run_config(cfg), &b);
  sa.start();
  sa.run();
  sb.start();
  sb.run();
  EXPECT_EQ(a.text(), b.text());
  EXPECT_GT(a.lines().size(), 30u);
}

TEST(Run, ReplayReproducesStatistics) {
  MemoryTrace trace;
  Session s(parse_run_config(needles_config(3, 3000)), &trace);
  s.start();
  s.run();
  std::vector<nlohmann::json> records;
  for (const auto& l : trace.lines()) records.push_back(nlohmann::json::parse(l));
  auto arms = replay_trace(records);
  const auto& pool = s.optimizer().state().pool;
  ASSERT_EQ(arms.size(), pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(arms[i].template_json, s.space().to_json(pool[i].id));
    EXPECT_EQ(arms[i].stats.m, pool[i].stats.m);
    EXPECT_EQ(arms[i].stats.total, pool[i].stats.total);
    EXPECT_EQ(arms[i].certified, pool[i].status == ArmStatus::certified);
  }
}

TEST(Uniform, CountsConcentrate) {
  std::vector<double> means(10, 0.5);
  nlohmann::json cfg{{"environment", {{"preset", "arms"}, {"means", means}}},
                     {"budget", 1000},
                     {"n0", 1},
                     {"seed", 5}};
  Session s(parse_run_config(cfg), nullptr);
  run_uniform(s);
  const auto& pool = s.optimizer().state().pool;
  ASSERT_EQ(pool.size(), 10u);
  for (const auto& a : pool) EXPECT_NEAR(static_cast<double>(a.stats.m), 100.0, 30.0);
  EXPECT_EQ(s.optimizer().state().budget_used, 1000u);
}

TEST(Uniform, SameSeedSameTrace) {
  MemoryTrace a;
  MemoryTrace b;
  Session sa(parse_run_config(needles_config(6, 2000)), &a);
  Session sb(parse_run_config(needles_config(6, 2000)), &b);
  run_uniform(sa);
  run_uniform(sb);
  EXPECT_EQ(a.text(), b.text());
  // Bernoulli means over few samples tie often.
  auto r = sa.optimizer().rank(RankBy::mean);
  EXPECT_LT(r.group_starts.size() - 1, r.rows.size() / 2);
}

TEST(Reeval, FreshDrawCounts) {
  const Space space(explicit_arms({0.5, 0.5}).space);
  OptimizerConfig oc;
  oc.n0 = 2;
  Optimizer opt(space, oc, 1);
  opt.add_arm(TemplateId{{0.0}}, true);
  opt.add_arm(TemplateId{{1.0}}, true);
  opt.state().pool[0].stats = {250, 125};
  opt.state().pool[1].stats = {40, 20};
  opt.state().pool[1].bounds.lcb = 0.1;
  SyntheticBackend backend(explicit_arms({0.5, 0.5}).mean, 3);
  auto ranking = opt.rank(RankBy::lcb);
  auto rows = reevaluate(opt, ranking, 2, 200, backend, UtilitySpec::error_rate(), 1);
  ASSERT_EQ(rows.size(), 2u);
  std::map<std::size_t, ReevalRow> by_arm;
  for (const auto& r : rows) by_arm[r.arm] = r;
  EXPECT_EQ(by_arm[0].fresh, 0u);
  EXPECT_EQ(by_arm[0].m, 250u);
  EXPECT_EQ(by_arm[1].fresh, 160u);
  EXPECT_EQ(by_arm[1].m, 200u);
  // The optimizer's own statistics are untouched.
  EXPECT_EQ(opt.state().pool[1].stats.m, 40u);
}

TEST(Reeval, ExtentCoversStraddlingTieGroup) {
  Ranking r;
  r.rows.resize(6);
  r.group_starts = {0, 2, 5, 6};
  EXPECT_EQ(reeval_extent(r, 3), 5u);
  EXPECT_EQ(reeval_extent(r, 2), 2u);
  EXPECT_EQ(reeval_extent(r, 10), 6u);
  EXPECT_EQ(reeval_extent(r, 0), 0u);
}

TEST(Reeval, MeanFallsInsideOriginalInterval) {
  std::size_t inside = 0;
  const std::size_t runs = 300;
  for (std::size_t seed = 0; seed < runs; ++seed) {
    nlohmann::json cfg{{"environment", {{"preset", "arms"}, {"means", {0.95, 0.5, 0.3}}}},
                       {"budget", 100},
                       {"n0", 3},
                       {"seed", seed}};
    Session s(parse_run_config(cfg), nullptr);
    s.start();
    s.run();
    const auto& opt = s.optimizer();
    auto ranking = opt.rank(RankBy::lcb);
    auto rows = reevaluate(opt, ranking, ranking.rows.size(), 200, s.backend(), s.config().utility, 1);
    for (const auto& r : rows) {
      const auto& a = opt.state().pool[r.arm];
      if (a.id.values[0] != 0.0) continue;
      if (r.mean() >= a.bounds.lcb && r.mean() <= a.bounds.ucb) ++inside;
    }
  }
  EXPECT_GE(inside, runs * 99 / 100);
}

TEST(Report, TieGroupExpectation) {
  Ranking r;
  r.rows = {{0, 0.5}, {1, 0.5}, {2, 0.5}};
  r.group_starts = {0, 3};
  std::vector<ReevalRow> rows{{0, 0, 1, 1.0}, {1, 0, 2, 1.0}, {2, 0, 1, 0.0}};
  auto curve = report_curve(r, rows);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(curve[0].expected, 0.5);
  EXPECT_DOUBLE_EQ(curve[0].cumulative, 1.0);
  EXPECT_DOUBLE_EQ(curve[2].expected, 0.5);
  EXPECT_DOUBLE_EQ(curve[2].running_min, 0.0);
  EXPECT_DOUBLE_EQ(curve[2].running_max, 1.0);
}

TEST(Report, NoTiesMeansExpectedEqualsCumulative) {
  Ranking r;
  std::vector<ReevalRow> rows;
  Rng rng(3);
  for (std::size_t k = 0; k < 20; ++k) {
    r.rows.push_back({k, 1.0 - 0.01 * static_cast<double>(k)});
    r.group_starts.push_back(k);
    rows.push_back({k, 0, 10, std::floor(uniform01(rng) * 11)});
  }
  r.group_starts.push_back(20);
  double grand = 0.0;
  for (const auto& row : rows) grand += row.mean();
  grand /= 20.0;
  auto curve = report_curve(r, rows);
  for (const auto& p : curve) EXPECT_NEAR(p.expected, p.cumulative, 1e-12);
  EXPECT_NEAR(curve.back().cumulative, grand, 1e-12);
}

TEST(Report, FullCutoffIsGrandMeanWithTies) {
  Ranking r;
  r.rows = {{0, 0.9}, {1, 0.5}, {2, 0.5}, {3, 0.5}, {4, 0.1}};
  r.group_starts = {0, 1, 4, 5};
  std::vector<ReevalRow> rows{{0, 0, 4, 3}, {1, 0, 4, 1}, {2, 0, 4, 4}, {3, 0, 4, 2}, {4, 0, 4, 0}};
  auto curve = report_curve(r, rows);
  EXPECT_NEAR(curve.back().expected, 0.5, 1e-12);
  EXPECT_NEAR(curve.back().cumulative, 0.5, 1e-12);
  // Cutoff 2 takes one of three equally likely members of the middle group.
  EXPECT_NEAR(curve[1].expected, (0.75 + (0.25 + 1.0 + 0.5) / 3.0) / 2.0, 1e-12);
}

TEST(Budget, OracleCallsMatchBudgetPlusTopUps) {
  auto cfg = parse_run_config(needles_config(4, 2000));
  const Space space(cfg.space);
  auto counting = std::make_shared<CountingBackend>(make_backend(cfg, space));
  Session s(cfg, nullptr, counting);
  s.start();
  s.run();
  EXPECT_EQ(counting->calls, 2000u);
  auto ranking = s.optimizer().rank(RankBy::lcb);
  auto rows = reevaluate(s.optimizer(), ranking, reeval_extent(ranking, 100), 200, *counting,
                         cfg.utility, 1);
  std::uint64_t fresh = 0;
  for (const auto& r : rows) fresh += r.fresh;
  EXPECT_EQ(counting->calls, 2000u + fresh);
}

TEST(Snapshot, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch("resume");
  auto cfg = parse_run_config(needles_config(7, 20000));
  const std::string ref_path = (dir / "ref.ndjson").string();
  const std::string path = (dir / "trace.ndjson").string();
  {
    FileTrace ref(ref_path, false);
    Session s(cfg, &ref);
    s.start();
    s.run();
  }
  nlohmann::json snap;
  {
    FileTrace t(path, false);
    Session s(cfg, &t);
    s.start();
    s.run([&](Session& session) {
      if (session.optimizer().state().batches == 500) {
        t.flush();
        snap = make_snapshot(session);
      }
    });
  }
  ASSERT_FALSE(snap.is_null());
  Session r(cfg, nullptr);
  MemoryTrace probe;
  restore_snapshot(r, snap, path, probe);
  {
    FileTrace t(path, true);
    t.resume_from(probe.sequence(), probe.digest());
    r.optimizer().set_sink(&t);
    r.run();
  }
  std::ifstream a(ref_path);
  std::ifstream b(path);
  std::stringstream sa;
  std::stringstream sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());

  Session altered(parse_run_config(needles_config(7, 19000)), nullptr);
  MemoryTrace p2;
  EXPECT_THROW(restore_snapshot(altered, snap, path, p2), ResumeError);
  Session missing(cfg, nullptr);
  EXPECT_THROW(restore_snapshot(missing, snap, (dir / "absent.ndjson").string(), p2), ResumeError);
  fs::remove_all(dir);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_run_config({{"budget", 10}}), ConfigError);
  auto odd = needles_config(1, 100);
  odd["batch_size"] = 3;
  EXPECT_THROW(parse_run_config(odd), ConfigError);
  auto small = needles_config(1, 10);
  EXPECT_THROW(parse_run_config(small), ConfigError);
  auto unknown = needles_config(1, 100);
  unknown["bugdet"] = 5;
  EXPECT_THROW(parse_run_config(unknown), ConfigError);
  auto cfg = parse_run_config(needles_config(1, 100));
  EXPECT_EQ(cfg.batch_size, 20u);
  EXPECT_EQ(cfg.optimizer.n0, 50u);
  EXPECT_EQ(cfg.reeval_min_samples, 200u);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const std::string out = (dir / "run").string();
  EXPECT_EQ(run_cli("run configs/needles.json --budget 400 -o '" + out + "'"), 0);
  EXPECT_EQ(run_cli("reeval '" + out + "' --top-k 5"), 0);
  EXPECT_EQ(run_cli("report '" + out + "'"), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "curve.tsv"));
  EXPECT_EQ(run_cli("uniform configs/needles.json --budget 400 -o '" + (dir / "u").string() + "'"), 0);
  EXPECT_EQ(run_cli("run configs/needles.json --batch-size 3 -o '" + out + "'"), 2);
  EXPECT_EQ(run_cli("run configs/does_not_exist.json -o '" + out + "'"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run configs/external.json --budget 200 -o '" + (dir / "ext").string() + "'",
                    "HARDSPOT_BACKEND_CMD='python3 tests/fixtures/echo_backend.py crash'"),
            3);
  EXPECT_EQ(run_cli("run configs/external.json --budget 40 -o '" + (dir / "ok").string() + "'"), 0);
  EXPECT_EQ(run_cli("verify --suite g2 --seeds 20"), 0);
  fs::remove_all(dir);
}
