// hardspot command line: run, uniform, reeval, report, verify, resume.
//
// A run directory holds config.json (the effective config), trace.ndjson,
// state.json (final state), snapshot.json (latest batch-boundary snapshot),
// reeval.json and the report tables.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hardspot/hardspot.hpp"

namespace fs = std::filesystem;
using namespace hardspot;

namespace {

enum Exit { kOk = 0, kConfig = 2, kBackend = 3, kVerification = 4 };

struct Overrides {
  std::optional<std::uint64_t> budget;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> n0;
  std::optional<double> delta;
  std::optional<double> c;
  std::optional<std::string> cert;
  std::optional<double> tau;
  bool repulsion = false;
  std::optional<double> lambda;
  std::optional<std::size_t> parallelism;
  std::optional<std::size_t> snapshot_every;

  void apply(nlohmann::json& j) const {
    if (budget) j["budget"] = *budget;
    if (seed) j["seed"] = *seed;
    if (batch_size) j["batch_size"] = *batch_size;
    if (n0) j["n0"] = *n0;
    if (delta) j["delta"] = *delta;
    if (c) j["c"] = *c;
    if (cert) j["certification"]["kind"] = *cert;
    if (tau) j["certification"]["tau"] = *tau;
    if (repulsion) j["repulsion"]["enabled"] = true;
    if (lambda) j["repulsion"]["lambda"] = *lambda;
    if (parallelism) j["parallelism"] = *parallelism;
    if (snapshot_every) j["snapshot_every"] = *snapshot_every;
  }
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--budget", o.budget, "total oracle calls");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--batch-size", o.batch_size, "batch size B (even)");
  cmd->add_option("--n0", o.n0, "initial pool size");
  cmd->add_option("--delta", o.delta, "failure probability");
  cmd->add_option("-c,--expansion-c", o.c, "expansion constant");
  cmd->add_option("--cert", o.cert, "certification: none, fixed or adaptive");
  cmd->add_option("--tau", o.tau, "certification threshold");
  cmd->add_flag("--repulsion", o.repulsion, "enable repulsion");
  cmd->add_option("--lambda", o.lambda, "repulsion strength");
  cmd->add_option("--parallelism", o.parallelism, "oracle calls in flight");
  cmd->add_option("--snapshot-every", o.snapshot_every, "snapshot every N batches (0: never)");
}

/// Effective config: file, then flags, then environment overrides.
nlohmann::json effective_config(const std::string& path, const Overrides& o) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  o.apply(j);
  if (const char* cmd = std::getenv("HARDSPOT_BACKEND_CMD"); cmd && *cmd) {
    if (j.contains("backend") && j["backend"].value("kind", "") == "external") {
      j["backend"]["command"] = cmd;
    }
  }
  if (const char* p = std::getenv("HARDSPOT_PARALLELISM"); p && *p) {
    try {
      j["parallelism"] = std::stoul(p);
    } catch (const std::exception&) {
      throw ConfigError("HARDSPOT_PARALLELISM must be a positive integer");
    }
  }
  return j;
}

void write_json_atomic(const fs::path& p, const nlohmann::json& j) {
  const fs::path tmp = p.string() + ".tmp";
  write_text(tmp, j.dump() + "\n");
  fs::rename(tmp, p);
}

nlohmann::json state_file(const Session& s, const std::string& mode) {
  return {{"format_version", kTraceFormatVersion},
          {"mode", mode},
          {"config", s.config().source},
          {"state", s.optimizer().state_to_json()}};
}

void print_summary(const Session& s) {
  const auto& st = s.optimizer().state();
  std::cout << "budget used " << st.budget_used << ", batches " << st.batches << ", pool "
            << st.pool.size() << ", certified " << st.certified.size() << ", epsilon "
            << st.epsilon << ", gamma " << st.gamma << "\n";
}

/// Runs batches to completion, snapshotting at the configured cadence.
void drive(Session& s, FileTrace& sink, const fs::path& dir) {
  const std::size_t every = s.config().snapshot_every;
  s.run([&](Session& session) {
    if (every > 0 && session.optimizer().state().batches % every == 0) {
      sink.flush();
      write_json_atomic(dir / "snapshot.json", make_snapshot(session));
    }
  });
}

int cmd_run(const std::string& config, const Overrides& o, const fs::path& dir, bool uniform) {
  auto j = effective_config(config, o);
  auto cfg = parse_run_config(j);
  fs::create_directories(dir);
  write_text(dir / "config.json", j.dump(2) + "\n");
  FileTrace sink((dir / "trace.ndjson").string(), false);
  Session s(cfg, &sink);
  if (uniform) {
    run_uniform(s);
  } else {
    s.start();
    drive(s, sink, dir);
  }
  write_json_atomic(dir / "state.json", state_file(s, uniform ? "uniform" : "coup"));
  print_summary(s);
  return kOk;
}

int cmd_resume(const fs::path& dir) {
  auto cfg = parse_run_config(read_json(dir / "config.json"));
  const fs::path snap_path = dir / "snapshot.json";
  if (!fs::exists(snap_path)) throw ResumeError("no snapshot in " + dir.string());
  const auto snap = read_json(snap_path);
  const std::string trace_path = (dir / "trace.ndjson").string();
  Session s(cfg, nullptr);
  MemoryTrace probe;
  restore_snapshot(s, snap, trace_path, probe);
  FileTrace sink(trace_path, true);
  sink.resume_from(probe.sequence(), probe.digest());
  s.optimizer().set_sink(&sink);
  drive(s, sink, dir);
  write_json_atomic(dir / "state.json", state_file(s, "coup"));
  print_summary(s);
  return kOk;
}

/// Session restored from a finished run directory.
struct Loaded {
  std::unique_ptr<Session> session;
  std::string mode;
};

Loaded load_run(const fs::path& dir) {
  const auto state = read_json(dir / "state.json");
  if (state.value("format_version", -1) != kTraceFormatVersion) {
    throw ResumeError("state file format version mismatch");
  }
  Loaded l;
  l.mode = state.at("mode").get<std::string>();
  l.session = std::make_unique<Session>(parse_run_config(state.at("config")), nullptr);
  l.session->optimizer().state_from_json(state.at("state"));
  return l;
}

int cmd_reeval(const fs::path& dir, std::optional<std::size_t> top_k,
               std::optional<std::size_t> min_samples) {
  auto l = load_run(dir);
  auto& s = *l.session;
  const auto by = l.mode == "uniform" ? RankBy::mean : RankBy::lcb;
  const auto ranking = s.optimizer().rank(by);
  const std::size_t k = top_k.value_or(s.config().reeval_top_k);
  const std::size_t min = min_samples.value_or(s.config().reeval_min_samples);
  const auto extent = reeval_extent(ranking, k);
  const auto rows = reevaluate(s.optimizer(), ranking, extent, min, s.backend(),
                               s.config().utility, s.config().parallelism);
  std::uint64_t fresh = 0;
  for (const auto& r : rows) fresh += r.fresh;

  // Re-evaluation calls are logged after the run's records.
  const std::string trace_path = (dir / "trace.ndjson").string();
  const auto records = read_trace(trace_path).size();
  FileTrace sink(trace_path, true);
  sink.resume_from(records, trace_prefix_digest(trace_path, records));
  sink.emit("reeval", s.optimizer().state().budget_used,
            {{"top_k", k}, {"min_samples", min}, {"rows", rows.size()}, {"fresh_calls", fresh}});
  sink.flush();

  write_json_atomic(dir / "reeval.json", {{"format_version", kTraceFormatVersion},
                                          {"rank_by", by == RankBy::lcb ? "lcb" : "mean"},
                                          {"top_k", k},
                                          {"min_samples", min},
                                          {"run_calls", s.optimizer().state().budget_used},
                                          {"reeval_calls", fresh},
                                          {"rows", reeval_to_json(rows)}});
  std::cout << "re-evaluated " << rows.size() << " arms with " << fresh << " fresh calls ("
            << s.optimizer().state().budget_used << " run calls)\n";
  return kOk;
}

int cmd_report(const fs::path& dir, std::size_t whiskers) {
  auto l = load_run(dir);
  auto& s = *l.session;
  const auto re = read_json(dir / "reeval.json");
  const auto by = re.at("rank_by").get<std::string>() == "mean" ? RankBy::mean : RankBy::lcb;
  const auto ranking = s.optimizer().rank(by);
  const auto rows = reeval_from_json(re.at("rows"));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (k >= ranking.rows.size() || rows[k].arm != ranking.rows[k].index) {
      throw ResumeError("reeval.json does not match the run's ranking");
    }
  }
  const auto curve = report_curve(ranking, rows);
  write_text(dir / "ranking.tsv", ranking_table(s.optimizer(), ranking, rows));
  write_text(dir / "curve.tsv", curve_table(curve));
  write_text(dir / "whiskers.tsv", whisker_table(s.optimizer(), ranking, rows, whiskers));
  std::cout << "wrote ranking.tsv, curve.tsv, whiskers.tsv for " << rows.size() << " ranks\n";
  if (!curve.empty()) {
    const auto& last = curve[std::min<std::size_t>(curve.size(), 10) - 1];
    std::cout << "top-" << last.k << " cumulative " << last.cumulative << ", expected "
              << last.expected << ", running min " << last.running_min << "\n";
  }
  return kOk;
}

int cmd_verify(const std::string& suite, std::optional<std::uint64_t> seeds) {
  bool ok = true;
  auto line = [&](const char* name, bool pass, const std::string& detail) {
    std::cout << name << ": " << (pass ? "PASS" : "FAIL") << " (" << detail << ")\n";
    ok = ok && pass;
  };
  const bool all = suite == "all";
  if (all || suite == "coverage") {
    auto r = verify::bound_coverage(seeds.value_or(10000));
    line("coverage", r.pass,
         std::to_string(r.failures) + "/" + std::to_string(r.runs) + " runs with an exit, critical " +
             std::to_string(r.critical));
  }
  if (all || suite == "g1") {
    auto r = verify::verify_g1(seeds.value_or(1000));
    line("g1", r.pass,
         std::to_string(r.violations) + " violations, " + std::to_string(r.violations_on_event) +
             " on event E, of " + std::to_string(r.seeds));
  }
  if (all || suite == "g2") {
    auto r = verify::verify_g2(seeds.value_or(500));
    auto t = verify::three_arm_trace();
    line("g2", r.pass && t.matches,
         std::to_string(r.contained) + "/" + std::to_string(r.seeds) + " contained, " +
             std::to_string(r.allocation_failures) + " allocation failures, 3-arm " + t.frozen +
             "/" + t.expected);
  }
  if (!all && suite != "coverage" && suite != "g1" && suite != "g2") {
    throw ConfigError("unknown suite '" + suite + "' (coverage, g1, g2, all)");
  }
  return ok ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-bounded search for hard templates"};
  app.require_subcommand(1);

  Overrides run_o;
  std::string run_config;
  fs::path run_out = "run";
  auto* run = app.add_subcommand("run", "optimize over a template space");
  run->add_option("config", run_config, "run config (JSON)")->required();
  run->add_option("-o,--out", run_out, "run directory");
  add_config_flags(run, run_o);

  Overrides uni_o;
  std::string uni_config;
  fs::path uni_out = "uniform";
  auto* uni = app.add_subcommand("uniform", "uniform-sampling baseline with the same budget");
  uni->add_option("config", uni_config, "run config (JSON)")->required();
  uni->add_option("-o,--out", uni_out, "run directory");
  add_config_flags(uni, uni_o);

  fs::path re_dir;
  std::optional<std::size_t> re_top;
  std::optional<std::size_t> re_min;
  auto* re = app.add_subcommand("reeval", "top up the top-ranked arms with fresh draws");
  re->add_option("dir", re_dir, "run directory")->required();
  re->add_option("--top-k", re_top, "number of ranks to re-evaluate");
  re->add_option("--min-samples", re_min, "samples per arm after re-evaluation");

  fs::path rep_dir;
  std::size_t whiskers = 100;
  auto* rep = app.add_subcommand("report", "write ranking, curve and whisker tables");
  rep->add_option("dir", rep_dir, "run directory")->required();
  rep->add_option("--whiskers", whiskers, "ranks in the whisker table");

  std::string suite = "all";
  std::optional<std::uint64_t> seeds;
  auto* ver = app.add_subcommand("verify", "Monte Carlo checks of bounds and batching");
  ver->add_option("--suite", suite, "coverage, g1, g2 or all");
  ver->add_option("--seeds", seeds, "seeds or runs per suite");

  fs::path res_dir;
  auto* res = app.add_subcommand("resume", "continue a run from its latest snapshot");
  res->add_option("dir", res_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(run_config, run_o, run_out, false);
    if (*uni) return cmd_run(uni_config, uni_o, uni_out, true);
    if (*re) return cmd_reeval(re_dir, re_top, re_min);
    if (*rep) return cmd_report(rep_dir, whiskers);
    if (*ver) return cmd_verify(suite, seeds);
    if (*res) return cmd_resume(res_dir);
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SpaceError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UtilityError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ResumeError& e) {
    std::cerr << "resume error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
