#pragma once

// Run orchestration: config loading, the batched budget loop, the uniform
// baseline, re-evaluation of top arms, report tables and snapshot/resume.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/batching.hpp"
#include "hardspot/environments.hpp"
#include "hardspot/external_backend.hpp"
#include "hardspot/optimizer.hpp"
#include "hardspot/oracle.hpp"
#include "hardspot/search_space.hpp"
#include "hardspot/trace.hpp"

namespace hardspot {

// ---------------------------------------------------------------------------
// Config

enum class BackendKind { synthetic, scripted, external };

struct BackendSpec {
  BackendKind kind = BackendKind::synthetic;
  std::uint64_t seed = 0;
  std::string mean_expression;    // synthetic without an environment preset
  nlohmann::json scripted_table;  // scripted: [{"template", "outcomes"}]
  std::string command;            // external
  double timeout_seconds = ExternalProcessBackend::kDefaultTimeoutSeconds;
};

struct RunConfig {
  nlohmann::json source;  // the config as given; hashed for resume checks
  SpaceSpec space;
  std::optional<nlohmann::json> environment;
  BackendSpec backend;
  UtilitySpec utility;
  std::uint64_t budget = 20000;
  std::size_t batch_size = 20;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::size_t reeval_min_samples = 200;
  std::size_t reeval_top_k = 100;
  std::size_t snapshot_every = 0;

  std::uint64_t digest() const { return fnv1a(source.dump()); }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* s) { return k == s; }) ==
        known.end()) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline UtilitySpec utility_from_json(const nlohmann::json& j) {
  check_keys(j, {"kind", "depth", "children", "expression", "failures_as_correct"}, "utility");
  const auto kind = get_or<std::string>(j, "kind", "error_rate");
  if (kind == "error_rate") return UtilitySpec::error_rate();
  if (kind == "complexity_weighted_error") {
    return UtilitySpec::complexity_weighted(get_or<std::string>(j, "depth", "depth"),
                                            get_or<std::string>(j, "children", "children"));
  }
  if (kind == "custom") {
    if (!j.contains("expression")) throw ConfigError("custom utility needs an expression");
    try {
      return UtilitySpec::custom(j["expression"].get<std::string>(),
                                 get_or<bool>(j, "failures_as_correct", true));
    } catch (const expr::ExpressionError& e) {
      throw ConfigError(std::string("utility expression: ") + e.what());
    }
  }
  throw ConfigError("unknown utility kind '" + kind + "'");
}

inline CertPolicy cert_from_json(const nlohmann::json& j) {
  check_keys(j, {"kind", "tau"}, "certification");
  const auto kind = get_or<std::string>(j, "kind", "none");
  const double tau = get_or<double>(j, "tau", 0.9);
  if (kind == "none") return CertPolicy::none();
  if (kind == "fixed") return CertPolicy::fixed(tau);
  if (kind == "adaptive") return CertPolicy::adaptive(tau);
  throw ConfigError("unknown certification kind '" + kind + "'");
}

}  // namespace detail

/// Parses a run config. Throws ConfigError (or SpaceError for bad spaces).
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::get_or;
  detail::check_keys(j,
                     {"space", "environment", "backend", "utility", "budget", "batch_size", "n0",
                      "delta", "c", "exploration_probability", "e", "certification", "repulsion",
                      "seed", "parallelism", "reevaluation_min_samples", "reevaluation_top_k",
                      "surrogate", "snapshot_every"},
                     "config");
  RunConfig c;
  if (j.contains("environment")) {
    c.environment = j["environment"];
    c.space = environment_from_json(j["environment"]).space;
    if (j.contains("space")) throw ConfigError("give either 'space' or 'environment', not both");
  } else if (j.contains("space")) {
    const auto& s = j["space"];
    if (s.is_object() && s.contains("preset")) {
      const auto name = s["preset"].get<std::string>();
      auto constraints = get_or<std::vector<std::string>>(s, "constraints", {});
      if (name == "dag_reasoning") {
        c.space = spaces::dag_reasoning(constraints);
      } else if (name == "grid_reasoning") {
        c.space = spaces::grid_reasoning();
        for (auto& k : constraints) c.space.constraints.push_back(k);
      } else {
        throw ConfigError("unknown space preset '" + name + "'");
      }
    } else {
      c.space = space_spec_from_json(s);
    }
  } else {
    throw ConfigError("config needs a 'space' or an 'environment'");
  }

  const nlohmann::json b = j.value("backend", nlohmann::json{{"kind", "synthetic"}});
  detail::check_keys(b, {"kind", "seed", "mean_expression", "outcomes", "file", "command",
                         "timeout_seconds"},
                     "backend");
  const auto kind = get_or<std::string>(b, "kind", "synthetic");
  c.backend.seed = get_or<std::uint64_t>(b, "seed", 0);
  c.backend.timeout_seconds =
      get_or<double>(b, "timeout_seconds", ExternalProcessBackend::kDefaultTimeoutSeconds);
  if (kind == "synthetic") {
    c.backend.kind = BackendKind::synthetic;
    c.backend.mean_expression = get_or<std::string>(b, "mean_expression", "");
    if (!c.environment && c.backend.mean_expression.empty()) {
      throw ConfigError("synthetic backend needs an environment preset or a mean_expression");
    }
  } else if (kind == "scripted") {
    c.backend.kind = BackendKind::scripted;
    if (b.contains("outcomes")) {
      c.backend.scripted_table = b["outcomes"];
    } else if (b.contains("file")) {
      std::ifstream in(b["file"].get<std::string>());
      if (!in) throw ConfigError("cannot read scripted outcomes file");
      c.backend.scripted_table = nlohmann::json::parse(in, nullptr, false);
      if (c.backend.scripted_table.is_discarded()) throw ConfigError("bad scripted outcomes file");
    } else {
      throw ConfigError("scripted backend needs 'outcomes' or 'file'");
    }
  } else if (kind == "external") {
    c.backend.kind = BackendKind::external;
    c.backend.command = get_or<std::string>(b, "command", "");
    if (c.backend.command.empty()) throw ConfigError("external backend needs a command");
  } else {
    throw ConfigError("unknown backend kind '" + kind + "'");
  }

  c.utility = detail::utility_from_json(j.value("utility", nlohmann::json::object()));
  c.budget = get_or<std::uint64_t>(j, "budget", 20000);
  c.batch_size = get_or<std::size_t>(j, "batch_size", 20);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.parallelism = get_or<std::size_t>(j, "parallelism", 1);
  c.reeval_min_samples = get_or<std::size_t>(j, "reevaluation_min_samples", 200);
  c.reeval_top_k = get_or<std::size_t>(j, "reevaluation_top_k", 100);
  c.snapshot_every = get_or<std::size_t>(j, "snapshot_every", 0);

  auto& o = c.optimizer;
  o.n0 = get_or<std::size_t>(j, "n0", 50);
  o.delta = get_or<double>(j, "delta", 0.01);
  o.c = get_or<double>(j, "c", 1.0);
  o.exploration_probability = get_or<double>(j, "exploration_probability", 0.5);
  o.exploration_e = get_or<double>(j, "e", 1.0);
  o.cert = detail::cert_from_json(j.value("certification", nlohmann::json::object()));
  const auto rep = j.value("repulsion", nlohmann::json::object());
  detail::check_keys(rep, {"enabled", "lambda", "epsilon_ref"}, "repulsion");
  o.repulsion.enabled = get_or<bool>(rep, "enabled", false);
  o.repulsion.lambda = get_or<double>(rep, "lambda", 0.1);
  o.repulsion.epsilon_ref = get_or<double>(rep, "epsilon_ref", 0.0);
  const auto sur = j.value("surrogate", nlohmann::json::object());
  detail::check_keys(sur, {"enabled", "trees", "min_leaf", "max_features", "candidates"},
                     "surrogate");
  o.use_surrogate = get_or<bool>(sur, "enabled", true);
  o.forest.trees = get_or<std::size_t>(sur, "trees", 100);
  o.forest.min_leaf = get_or<std::size_t>(sur, "min_leaf", 2);
  o.forest.max_features = get_or<std::size_t>(sur, "max_features", 0);
  o.proposal_candidates = get_or<std::size_t>(sur, "candidates", Surrogate::kDefaultCandidates);

  std::vector<std::string> errors = validate(o);
  if (c.batch_size < 2 || c.batch_size % 2 != 0) errors.emplace_back("batch_size must be even and >= 2");
  if (c.budget != 0 && c.budget < o.n0) errors.emplace_back("budget must be 0 or at least n0");
  if (c.parallelism < 1) errors.emplace_back("parallelism must be >= 1");
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw ConfigError(msg);
  }
  c.source = j;
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  return parse_run_config(j);
}

/// Mean function of a synthetic config, if it has one.
inline std::optional<MeanFunction> config_mean_function(const RunConfig& c) {
  if (c.environment) return environment_from_json(*c.environment).mean;
  if (c.backend.kind == BackendKind::synthetic && !c.backend.mean_expression.empty()) {
    return expression_environment("custom", c.space, c.backend.mean_expression).mean;
  }
  return std::nullopt;
}

inline std::shared_ptr<Backend> make_backend(const RunConfig& c, const Space& space) {
  switch (c.backend.kind) {
    case BackendKind::synthetic:
      return std::make_shared<SyntheticBackend>(*config_mean_function(c),
                                                mix64(c.seed, c.backend.seed));
    case BackendKind::scripted:
      return std::make_shared<ScriptedBackend>(
          ScriptedBackend::from_json(c.backend.scripted_table, space));
    case BackendKind::external:
      return std::make_shared<ExternalProcessBackend>(c.backend.command, space,
                                                      c.backend.timeout_seconds);
  }
  throw ConfigError("unsupported backend");
}

// ---------------------------------------------------------------------------
// COUP session

/// One optimizer run. Owns the space, backend and optimizer; the trace sink
/// is borrowed and may be null.
class Session {
 public:
  Session(RunConfig config, TraceSink* sink, std::shared_ptr<Backend> backend = nullptr)
      : cfg_(std::move(config)),
        space_(std::make_unique<Space>(cfg_.space)),
        backend_(backend ? std::move(backend) : make_backend(cfg_, *space_)),
        opt_(*space_, cfg_.optimizer, cfg_.seed, sink) {}

  const RunConfig& config() const noexcept { return cfg_; }
  const Space& space() const noexcept { return *space_; }
  Optimizer& optimizer() noexcept { return opt_; }
  const Optimizer& optimizer() const noexcept { return opt_; }
  Backend& backend() noexcept { return *backend_; }
  bool finished() const noexcept { return finished_; }

  void start(std::string_view mode = "coup") {
    opt_.emit("header", {{"format_version", kTraceFormatVersion},
                         {"mode", mode},
                         {"config", cfg_.source},
                         {"space_size", opt_.space_size() ? nlohmann::json(*opt_.space_size())
                                                           : nlohmann::json(nullptr)}});
    opt_.init(cfg_.budget);
    finished_ = cfg_.budget == 0;
  }

  /// Adds templates until a challenger exists. Returns false when the space
  /// cannot supply one.
  bool ensure_selectable() {
    while (opt_.in_play_count() <= opt_.leader_set_size()) {
      if (opt_.saturated()) return false;
      auto prop = opt_.propose_expansion();
      if (!prop) return false;
      const std::size_t i = opt_.add_arm(std::move(prop->id), prop->uniform);
      opt_.emit("expansion", {{"arm", i}, {"forced", true}});
      opt_.update_control_quantities();
    }
    return true;
  }

  /// One batch. Returns false (and marks the run finished) once the budget is
  /// spent or no pair can be formed.
  bool step() {
    auto& st = opt_.state();
    if (finished_ || st.budget_used >= st.budget_total) {
      finished_ = true;
      return false;
    }
    opt_.update_control_quantities();
    if (!ensure_selectable()) {
      opt_.emit("stopped", {{"reason", "no selectable pair"}});
      finished_ = true;
      return false;
    }
    const std::size_t n = static_cast<std::size_t>(
        std::min<std::uint64_t>(cfg_.batch_size, st.budget_total - st.budget_used));
    const std::uint64_t salt = st.rng();
    const std::size_t steps = n - n / 2;
    auto schedule = simulate_activation_schedule(opt_, steps, salt);
    auto plan = build_batch(opt_, schedule, n, salt);
    const double eps = st.epsilon;
    const double gamma = st.gamma;
    const auto incumbent = st.incumbent;
    auto result = execute_batch(opt_, plan, schedule, *backend_, cfg_.utility, cfg_.parallelism);
    opt_.certify_step();
    ++st.batches;
    last_plan_ = plan;
    if (opt_.sink()) {
      nlohmann::json sched = nlohmann::json::array();
      for (const auto& e : schedule.entries) {
        sched.push_back({{"step", e.step}, {"arm", st.index.at(e.id)}});
      }
      nlohmann::json outcomes = nlohmann::json::array();
      for (const auto& o : result.outcomes) outcomes.push_back(outcome_to_json(o));
      opt_.emit("batch", {{"batch", st.batches},
                          {"epsilon", eps},
                          {"gamma", gamma},
                          {"incumbent", incumbent ? nlohmann::json(*incumbent) : nlohmann::json()},
                          {"leader", st.index.at(plan.leader)},
                          {"schedule", sched},
                          {"plan", result.arms},
                          {"outcomes", outcomes},
                          {"utilities", result.utilities}});
    }
    if (st.budget_used >= st.budget_total) finished_ = true;
    return true;
  }

  const BatchPlan& last_plan() const noexcept { return last_plan_; }

  /// Runs to completion; `after_batch` is called at every batch boundary.
  void run(const std::function<void(Session&)>& after_batch = {}) {
    while (step()) {
      if (after_batch) after_batch(*this);
    }
    opt_.update_control_quantities();
    opt_.emit("finished", {{"budget_used", opt_.state().budget_used},
                           {"pool_size", opt_.state().pool.size()},
                           {"certified", opt_.state().certified.size()},
                           {"epsilon", opt_.state().epsilon},
                           {"gamma", opt_.state().gamma}});
    if (opt_.sink()) opt_.sink()->flush();
  }

 private:
  RunConfig cfg_;
  std::unique_ptr<Space> space_;
  std::shared_ptr<Backend> backend_;
  Optimizer opt_;
  bool finished_ = false;
  BatchPlan last_plan_;
};

/// Unbatched reference loop: one leader and one challenger per step, with the
/// expansion rule checked before every step. Used to check that two-slot
/// batches behave exactly like sequential steps.
struct SequentialStep {
  TemplateId leader;
  TemplateId challenger;
};

inline std::vector<SequentialStep> run_sequential_reference(Session& s) {
  auto& opt = s.optimizer();
  auto& st = opt.state();
  std::vector<SequentialStep> pairs;
  while (st.budget_used + 2 <= st.budget_total) {
    opt.update_control_quantities();
    if (!s.ensure_selectable()) break;
    const std::uint64_t salt = st.rng();
    const bool room = !opt.saturated();
    if (room && opt.expansion_due()) {
      if (auto prop = opt.propose_expansion()) opt.add_arm(std::move(prop->id), prop->uniform);
    }
    auto pen = opt.penalties();
    auto pair = selection::pair(opt.views(salt, pen.pool), opt.leader_set_size(), opt.lambda());
    if (!pair || !pair->challenger) break;
    const std::size_t arms[2] = {pair->leader, *pair->challenger};
    std::vector<EvalRequest> requests;
    for (int k = 0; k < 2; ++k) {
      const auto& a = st.pool[arms[k]];
      const std::uint64_t draw = a.stats.m;
      requests.push_back({a.id, instance_seed(st.seed, kRunStream, a.id, draw), draw});
    }
    auto outcomes = s.backend().evaluate_batch(requests, 1);
    for (int k = 0; k < 2; ++k) {
      opt.observe(arms[k], utility(s.config().utility, outcomes[k], requests[k].id, s.space()));
    }
    st.budget_used += 2;
    opt.refresh();
    opt.certify_step();
    ++st.batches;
    pairs.push_back({st.pool[arms[0]].id, st.pool[arms[1]].id});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Uniform baseline

/// Spends the whole budget on templates drawn uniformly with replacement,
/// with the same per-arm bookkeeping and no adaptive allocation.
inline void run_uniform(Session& s) {
  auto& opt = s.optimizer();
  auto& st = opt.state();
  opt.emit("header", {{"format_version", kTraceFormatVersion},
                      {"mode", "uniform"},
                      {"config", s.config().source}});
  st.budget_total = s.config().budget;
  while (st.budget_used < st.budget_total) {
    const std::size_t n = static_cast<std::size_t>(
        std::min<std::uint64_t>(s.config().batch_size, st.budget_total - st.budget_used));
    std::vector<EvalRequest> requests;
    std::vector<std::size_t> arms;
    std::unordered_map<std::size_t, std::uint64_t> seen;
    for (std::size_t k = 0; k < n; ++k) {
      auto id = s.space().sample_uniform(st.rng);
      auto it = st.index.find(id);
      const std::size_t i = it != st.index.end() ? it->second : opt.add_arm(id, true);
      const std::uint64_t draw = st.pool[i].stats.m + seen[i]++;
      requests.push_back({id, instance_seed(st.seed, kRunStream, id, draw), draw});
      arms.push_back(i);
    }
    auto outcomes = s.backend().evaluate_batch(requests, s.config().parallelism);
    std::vector<double> utilities;
    for (std::size_t k = 0; k < n; ++k) {
      utilities.push_back(utility(s.config().utility, outcomes[k], requests[k].id, s.space()));
      opt.observe(arms[k], utilities.back());
    }
    st.budget_used += n;
    opt.refresh();
    ++st.batches;
    if (opt.sink()) {
      opt.emit("batch", {{"batch", st.batches}, {"plan", arms}, {"utilities", utilities}});
    }
  }
  opt.update_control_quantities();
  opt.emit("finished", {{"budget_used", st.budget_used}, {"pool_size", st.pool.size()}});
  if (opt.sink()) opt.sink()->flush();
}

// ---------------------------------------------------------------------------
// Re-evaluation and reports

struct ReevalRow {
  std::size_t arm = 0;
  std::uint64_t fresh = 0;  // draws added by re-evaluation
  std::uint64_t m = 0;      // total samples after re-evaluation
  double total = 0.0;
  double mean() const { return m == 0 ? 0.0 : total / static_cast<double>(m); }
};

/// Number of ranked rows to re-evaluate: the top `top_k`, extended to the
/// end of the tie group straddling the cutoff so expected tie-broken curves
/// are defined.
inline std::size_t reeval_extent(const Ranking& r, std::size_t top_k) {
  const std::size_t k = std::min(top_k, r.rows.size());
  if (k == 0) return 0;
  for (std::size_t g = 0; g + 1 < r.group_starts.size(); ++g) {
    if (r.group_starts[g] < k && k <= r.group_starts[g + 1]) return r.group_starts[g + 1];
  }
  return k;
}

/// Tops each of the first `extent` ranked arms up to `min_samples` with fresh
/// draws from a stream disjoint from the run's. Fresh draws never touch the
/// optimizer's statistics.
inline std::vector<ReevalRow> reevaluate(const Optimizer& opt, const Ranking& ranking,
                                         std::size_t extent, std::size_t min_samples,
                                         Backend& backend, const UtilitySpec& spec,
                                         std::size_t width) {
  const auto& st = opt.state();
  std::vector<ReevalRow> rows;
  std::vector<EvalRequest> requests;
  std::vector<std::size_t> owner;
  for (std::size_t k = 0; k < std::min(extent, ranking.rows.size()); ++k) {
    const auto& a = st.pool[ranking.rows[k].index];
    ReevalRow r{ranking.rows[k].index, 0, a.stats.m, a.stats.total};
    if (a.stats.m < min_samples) r.fresh = min_samples - a.stats.m;
    for (std::uint64_t d = 0; d < r.fresh; ++d) {
      const std::uint64_t draw = a.stats.m + d;
      requests.push_back({a.id, instance_seed(st.seed, kReevalStream, a.id, draw), draw});
      owner.push_back(rows.size());
    }
    rows.push_back(r);
  }
  auto outcomes = backend.evaluate_batch(requests, width);
  for (std::size_t q = 0; q < requests.size(); ++q) {
    auto& r = rows[owner[q]];
    r.total += utility(spec, outcomes[q], requests[q].id, opt.space());
    r.m += 1;
  }
  return rows;
}

struct CurvePoint {
  std::size_t k = 0;
  double cumulative = 0.0;  // mean re-evaluated utility of ranks 1..k, in rank order
  double expected = 0.0;    // same, averaged over orderings within tie groups
  double running_min = 0.0;
  double running_max = 0.0;
};

/// Curves over the first `rows.size()` ranks. `reeval[k]` belongs to rank k.
inline std::vector<CurvePoint> report_curve(const Ranking& ranking,
                                            const std::vector<ReevalRow>& reeval) {
  std::vector<CurvePoint> out;
  const std::size_t n = reeval.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + reeval[k].mean();
  double lo = 1.0;
  double hi = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    lo = std::min(lo, reeval[k - 1].mean());
    hi = std::max(hi, reeval[k - 1].mean());
    CurvePoint p;
    p.k = k;
    p.cumulative = prefix[k] / static_cast<double>(k);
    // Expected sum: full groups above k, plus the straddling group's mean per
    // slot it contributes.
    double sum = 0.0;
    for (std::size_t g = 0; g + 1 < ranking.group_starts.size(); ++g) {
      const std::size_t a = ranking.group_starts[g];
      const std::size_t b = std::min(ranking.group_starts[g + 1], n);
      if (a >= k || a >= n) break;
      if (b <= k) {
        sum += prefix[b] - prefix[a];
      } else {
        const double group_mean = (prefix[b] - prefix[a]) / static_cast<double>(b - a);
        sum += static_cast<double>(k - a) * group_mean;
      }
    }
    p.expected = sum / static_cast<double>(k);
    p.running_min = lo;
    p.running_max = hi;
    out.push_back(p);
  }
  return out;
}

inline nlohmann::json reeval_to_json(const std::vector<ReevalRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"arm", r.arm}, {"fresh", r.fresh}, {"m", r.m}, {"total", r.total}});
  }
  return j;
}

inline std::vector<ReevalRow> reeval_from_json(const nlohmann::json& j) {
  std::vector<ReevalRow> rows;
  for (const auto& r : j) {
    rows.push_back({r.at("arm").get<std::size_t>(), r.at("fresh").get<std::uint64_t>(),
                    r.at("m").get<std::uint64_t>(), r.at("total").get<double>()});
  }
  return rows;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline constexpr const char* kReportHeader = "# hardspot report v1";

/// Ranking table: one row per re-evaluated rank.
inline std::string ranking_table(const Optimizer& opt, const Ranking& ranking,
                                 const std::vector<ReevalRow>& reeval) {
  std::ostringstream os;
  os << kReportHeader << "\nrank\ttemplate\tscore\tm\tlcb\tucb\treeval_mean\treeval_m\ttie_group\n";
  std::size_t group = 0;
  for (std::size_t k = 0; k < reeval.size(); ++k) {
    while (group + 1 < ranking.group_starts.size() && ranking.group_starts[group + 1] <= k) ++group;
    const auto& a = opt.state().pool[ranking.rows[k].index];
    os << k + 1 << '\t' << opt.space().to_json(a.id).dump() << '\t'
       << format_double(ranking.rows[k].score) << '\t' << a.stats.m << '\t'
       << format_double(a.bounds.lcb) << '\t' << format_double(a.bounds.ucb) << '\t'
       << format_double(reeval[k].mean()) << '\t' << reeval[k].m << '\t' << group << '\n';
  }
  return os.str();
}

inline std::string curve_table(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << kReportHeader << "\nk\tcumulative\texpected_tie_broken\trunning_min\trunning_max\n";
  for (const auto& p : curve) {
    os << p.k << '\t' << format_double(p.cumulative) << '\t' << format_double(p.expected) << '\t'
       << format_double(p.running_min) << '\t' << format_double(p.running_max) << '\n';
  }
  return os.str();
}

/// Confidence-interval whiskers for the first `limit` ranks.
inline std::string whisker_table(const Optimizer& opt, const Ranking& ranking,
                                 const std::vector<ReevalRow>& reeval, std::size_t limit = 100) {
  std::ostringstream os;
  os << kReportHeader << "\nrank\tlcb\tucb\treeval_mean\tinside\n";
  for (std::size_t k = 0; k < std::min(limit, reeval.size()); ++k) {
    const auto& b = opt.state().pool[ranking.rows[k].index].bounds;
    const double r = reeval[k].mean();
    os << k + 1 << '\t' << format_double(b.lcb) << '\t' << format_double(b.ucb) << '\t'
       << format_double(r) << '\t' << (b.lcb <= r && r <= b.ucb ? 1 : 0) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Persistence

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error(p.string() + " is not valid JSON");
  return j;
}

class ResumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Snapshot taken at a batch boundary: full optimizer state plus the digests
/// that tie it to its config and trace prefix.
inline nlohmann::json make_snapshot(const Session& s) {
  const auto* sink = s.optimizer().sink();
  return {{"format_version", kTraceFormatVersion},
          {"config_digest", s.config().digest()},
          {"trace_records", sink ? sink->sequence() : 0},
          {"trace_digest", sink ? sink->digest() : 0},
          {"state", s.optimizer().state_to_json()}};
}

/// Restores a snapshot into a fresh session whose trace continues after the
/// snapshot's records. Truncates `trace_path` to the snapshot prefix.
inline void restore_snapshot(Session& s, const nlohmann::json& snap, const std::string& trace_path,
                             TraceSink& sink) {
  if (snap.value("format_version", -1) != kTraceFormatVersion) {
    throw ResumeError("snapshot format version mismatch");
  }
  if (snap.at("config_digest").get<std::uint64_t>() != s.config().digest()) {
    throw ResumeError("config differs from the one the snapshot was taken with");
  }
  if (!std::filesystem::exists(trace_path)) throw ResumeError("trace file missing: " + trace_path);
  const auto records = snap.at("trace_records").get<std::uint64_t>();
  std::uint64_t digest = 0;
  try {
    digest = trace_prefix_digest(trace_path, records);
  } catch (const std::runtime_error& e) {
    throw ResumeError(e.what());
  }
  if (digest != snap.at("trace_digest").get<std::uint64_t>()) {
    throw ResumeError("trace does not match the snapshot");
  }
  // Drop records written after the snapshot.
  {
    std::ifstream in(trace_path);
    std::string kept;
    std::string line;
    for (std::uint64_t k = 0; k < records && std::getline(in, line); ++k) kept += line + '\n';
    in.close();
    write_text(trace_path, kept);
  }
  sink.resume_from(records, digest);
  s.optimizer().state_from_json(snap.at("state"));
}

/// Rebuilds per-arm statistics from a trace alone: arms from arm_added
/// records, samples from batch utilities, statuses from certified records.
struct ReplayedArm {
  nlohmann::json template_json;
  ArmStats stats;
  bool certified = false;
};

inline std::vector<ReplayedArm> replay_trace(const std::vector<nlohmann::json>& records) {
  std::vector<ReplayedArm> arms;
  for (const auto& r : records) {
    const auto type = r.at("type").get<std::string>();
    if (type == "arm_added") {
      arms.push_back({r.at("template"), {}, false});
    } else if (type == "batch") {
      const auto plan = r.at("plan").get<std::vector<std::size_t>>();
      const auto ys = r.at("utilities").get<std::vector<double>>();
      for (std::size_t k = 0; k < plan.size(); ++k) {
        arms.at(plan[k]).stats = record_observation(arms.at(plan[k]).stats, ys[k]);
      }
    } else if (type == "certified") {
      arms.at(r.at("arm").get<std::size_t>()).certified = true;
    }
  }
  return arms;
}

}  // namespace hardspot
