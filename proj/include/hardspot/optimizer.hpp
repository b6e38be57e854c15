#pragma once

// Confidence-bounded search over a template space: leader/challenger
// selection, incumbent and epsilon/gamma tracking, pool expansion,
// certification and repulsion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/bounds.hpp"
#include "hardspot/rng.hpp"
#include "hardspot/search_space.hpp"
#include "hardspot/surrogate.hpp"
#include "hardspot/trace.hpp"

namespace hardspot {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ArmStatus { active, certified, retired };

inline const char* to_string(ArmStatus s) noexcept {
  switch (s) {
    case ArmStatus::active: return "active";
    case ArmStatus::certified: return "certified";
    case ArmStatus::retired: return "retired";
  }
  return "?";
}

enum class CertKind { none, fixed, adaptive };

inline const char* to_string(CertKind k) noexcept {
  switch (k) {
    case CertKind::none: return "none";
    case CertKind::fixed: return "fixed";
    case CertKind::adaptive: return "adaptive";
  }
  return "?";
}

struct CertPolicy {
  CertKind kind = CertKind::none;
  double tau = 0.9;  // fixed threshold, or the starting threshold when adaptive

  static CertPolicy none() { return {}; }
  static CertPolicy fixed(double tau) { return {CertKind::fixed, tau}; }
  static CertPolicy adaptive(double tau0) { return {CertKind::adaptive, tau0}; }
};

struct RepulsionPolicy {
  bool enabled = false;
  double lambda = 0.1;
  double epsilon_ref = 0.0;
};

struct OptimizerConfig {
  std::size_t n0 = 50;
  double delta = 0.01;
  double c = 1.0;
  double exploration_probability = 0.5;
  double exploration_e = 1.0;  // accepted for completeness; no step reads it
  std::size_t proposal_candidates = Surrogate::kDefaultCandidates;
  std::size_t proposal_retries = 100;
  bool use_surrogate = true;
  CertPolicy cert;
  RepulsionPolicy repulsion;
  ForestParams forest;
  double adaptive_step = 1e-3;   // grid for the threshold-raise search
  double adaptive_floor = 0.01;  // gap floor in the samples-to-reach model

  // Half the failure budget goes to the bounds, half to the gamma estimate.
  double bounds_delta() const noexcept { return delta / 2.0; }
  double gamma_delta() const noexcept { return delta / 2.0; }
};

inline std::vector<std::string> validate(const OptimizerConfig& c) {
  std::vector<std::string> errors;
  if (!(c.delta > 0.0 && c.delta < 1.0)) errors.emplace_back("delta must lie in (0,1)");
  if (c.n0 < 1) errors.emplace_back("n0 must be at least 1");
  if (!(c.exploration_probability >= 0.0 && c.exploration_probability <= 1.0)) {
    errors.emplace_back("exploration probability must lie in [0,1]");
  }
  if (c.cert.kind != CertKind::none && !(c.cert.tau > 0.0 && c.cert.tau < 1.0)) {
    errors.emplace_back("certification threshold must lie in (0,1)");
  }
  if (c.repulsion.lambda < 0.0) errors.emplace_back("repulsion lambda must be >= 0");
  if (c.repulsion.epsilon_ref < 0.0) errors.emplace_back("repulsion epsilon_ref must be >= 0");
  if (c.proposal_candidates < 1) errors.emplace_back("proposal candidate count must be >= 1");
  if (c.forest.trees < 1) errors.emplace_back("forest needs at least one tree");
  if (c.forest.min_leaf < 1) errors.emplace_back("forest min leaf must be >= 1");
  return errors;
}

struct ArmRecord {
  TemplateId id;
  ArmStats stats;
  Bounds bounds;
  ArmStatus status = ArmStatus::active;
  std::uint64_t activation_step = 0;
  bool uniform_origin = true;
  std::uint64_t id_hash = 0;
};

struct RunState {
  std::vector<ArmRecord> pool;
  std::unordered_map<TemplateId, std::size_t, TemplateIdHash> index;
  std::optional<std::size_t> incumbent;
  double epsilon = 1.0;
  double gamma = 1.0;
  std::uint64_t uniform_proposals = 0;
  std::uint64_t model_proposals = 0;
  std::uint64_t seed = 0;
  Rng rng;
  std::uint64_t budget_used = 0;
  std::uint64_t budget_total = 0;
  std::uint64_t batches = 0;
  double threshold = 0.0;
  std::vector<std::size_t> certified;  // pool indices, in certification order
  std::size_t last_refresh_pool_size = 0;
  std::size_t configs_with_two_samples = 0;
  std::uint64_t trainings = 0;
};

/// Selection-relevant view of one arm.
struct ArmView {
  double mean = 0.0;  // 0 for unsampled arms
  double lcb = 0.0;
  double ucb = 1.0;
  double penalty = 0.0;  // max proximity to the reference set
  std::uint64_t priority = 0;
  bool eligible = false;
};

struct SelectedPair {
  std::size_t leader = 0;
  std::optional<std::size_t> challenger;
  std::vector<std::size_t> excluded;  // leader, or the whole empirical top-K
};

namespace selection {

/// Index maximizing `score` over eligible arms accepted by `keep`; equal
/// scores go to the higher priority.
template <class Score, class Keep>
std::optional<std::size_t> argmax(const std::vector<ArmView>& v, Score score, Keep keep) {
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].eligible || !keep(i)) continue;
    const double s = score(v[i]);
    if (!best || s > best_score || (s == best_score && v[i].priority > v[*best].priority)) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

/// The K eligible arms with the highest empirical means.
inline std::vector<std::size_t> top_by_mean(const std::vector<ArmView>& v, std::size_t k) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].eligible) ids.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (v[a].mean != v[b].mean) return v[a].mean > v[b].mean;
    return v[a].priority > v[b].priority;
  };
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  ids.resize(k);
  return ids;
}

inline double adjusted_ucb(const ArmView& a, double lambda) { return a.ucb - lambda * a.penalty; }

inline std::optional<std::size_t> challenger(const std::vector<ArmView>& v,
                                             const std::vector<std::size_t>& excluded,
                                             double lambda) {
  return argmax(
      v, [&](const ArmView& a) { return adjusted_ucb(a, lambda); },
      [&](std::size_t i) {
        return std::find(excluded.begin(), excluded.end(), i) == excluded.end();
      });
}

/// LUCB pair when k <= 1: empirical-mean leader, highest (adjusted) ucb
/// challenger among the rest. With k >= 2 (adaptive certification): leader is
/// the min-lcb member of the empirical top-k, challenger the best outsider.
inline std::optional<SelectedPair> pair(const std::vector<ArmView>& v, std::size_t k,
                                        double lambda) {
  SelectedPair p;
  if (k <= 1) {
    auto leader = argmax(v, [](const ArmView& a) { return a.mean; }, [](std::size_t) {
      return true;
    });
    if (!leader) return std::nullopt;
    p.leader = *leader;
    p.excluded = {*leader};
  } else {
    p.excluded = top_by_mean(v, k);
    if (p.excluded.empty()) return std::nullopt;
    std::size_t lead = p.excluded.front();
    for (std::size_t i : p.excluded) {
      if (v[i].lcb < v[lead].lcb || (v[i].lcb == v[lead].lcb && v[i].priority > v[lead].priority)) {
        lead = i;
      }
    }
    p.leader = lead;
  }
  p.challenger = challenger(v, p.excluded, lambda);
  return p;
}

}  // namespace selection

/// Samples needed under the Hoeffding model for an arm with mean `mean` to
/// clear threshold t: ln(2/delta_i) / (2 max(mean - t, floor)^2).
inline double samples_to_reach(double t, double mean, double delta_i, double floor) {
  const double gap = std::max(mean - t, floor);
  return std::log(2.0 / delta_i) / (2.0 * gap * gap);
}

struct RankedArm {
  std::size_t index = 0;
  double score = 0.0;
};

struct Ranking {
  std::vector<RankedArm> rows;
  /// Start offsets of runs of equal scores, plus rows.size() at the end.
  std::vector<std::size_t> group_starts;
};

enum class RankBy { lcb, mean };

struct Proposal {
  TemplateId id;
  bool uniform = true;
};

class Optimizer {
 public:
  Optimizer(const Space& space, OptimizerConfig config, std::uint64_t seed,
            TraceSink* sink = nullptr)
      : space_(space), cfg_(std::move(config)), surrogate_(cfg_.forest), sink_(sink) {
    if (auto errors = validate(cfg_); !errors.empty()) {
      std::string msg;
      for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
      throw ConfigError(msg);
    }
    st_.seed = seed;
    st_.rng.seed(mix64(seed, 0x72756eULL));
    st_.threshold = cfg_.cert.tau;
    if (!space_.has_continuous()) {
      try {
        space_size_ = space_.count_discrete();
      } catch (const SpaceError&) {
        // too large to enumerate: treat as never saturating
      }
    }
  }

  const Space& space() const noexcept { return space_; }
  const OptimizerConfig& config() const noexcept { return cfg_; }
  RunState& state() noexcept { return st_; }
  const RunState& state() const noexcept { return st_; }
  Surrogate& surrogate() noexcept { return surrogate_; }
  TraceSink* sink() const noexcept { return sink_; }
  void set_sink(TraceSink* sink) noexcept { sink_ = sink; }

  void emit(std::string_view type, nlohmann::json fields) {
    if (sink_) sink_->emit(type, st_.budget_used, std::move(fields));
  }

  // ---- pool ---------------------------------------------------------------

  /// Seeds the pool with n0 distinct uniform templates.
  void init(std::uint64_t budget_total) {
    st_.budget_total = budget_total;
    std::size_t misses = 0;
    while (st_.pool.size() < cfg_.n0 && !saturated()) {
      auto id = space_.sample_uniform(st_.rng);
      if (st_.index.count(id)) {
        if (++misses > cfg_.proposal_retries * cfg_.n0) break;
        continue;
      }
      add_arm(std::move(id), true);
    }
    st_.last_refresh_pool_size = st_.pool.size();
    update_control_quantities();
  }

  bool saturated() const noexcept { return space_size_ && st_.pool.size() >= *space_size_; }
  std::optional<std::uint64_t> space_size() const noexcept { return space_size_; }

  bool contains(const TemplateId& id) const { return st_.index.count(id) > 0; }

  std::size_t add_arm(TemplateId id, bool uniform) {
    ArmRecord rec;
    rec.id_hash = stable_hash(id);
    rec.id = std::move(id);
    rec.uniform_origin = uniform;
    rec.activation_step = st_.budget_used;
    rec.bounds.pool_size_at_compute = st_.pool.size() + 1;
    const std::size_t i = st_.pool.size();
    st_.index.emplace(rec.id, i);
    st_.pool.push_back(std::move(rec));
    if (uniform) {
      ++st_.uniform_proposals;
    } else {
      ++st_.model_proposals;
    }
    if (sink_) {
      emit("arm_added", {{"arm", i},
                         {"template", space_.to_json(st_.pool[i].id)},
                         {"origin", uniform ? "uniform" : "model"}});
    }
    return i;
  }

  bool in_play(std::size_t i) const {
    const auto s = st_.pool[i].status;
    return s == ArmStatus::active ||
           (s == ArmStatus::certified && cfg_.cert.kind == CertKind::adaptive);
  }

  std::size_t in_play_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < st_.pool.size(); ++i) n += in_play(i) ? 1 : 0;
    return n;
  }

  /// Records one utility for arm i and recomputes its bounds at the current
  /// pool size.
  void observe(std::size_t i, double y) {
    auto& a = st_.pool.at(i);
    a.stats = record_observation(a.stats, y);
    a.bounds = compute_bounds(a.stats, cfg_.bounds_delta(), st_.pool.size());
    if (a.stats.m == 2) ++st_.configs_with_two_samples;
  }

  /// Recomputes every arm with m >= 2 once the pool has grown 1.5x.
  bool refresh() {
    const std::size_t before = st_.last_refresh_pool_size;
    st_.last_refresh_pool_size =
        deferred_refresh(st_.pool, st_.last_refresh_pool_size, cfg_.bounds_delta());
    if (st_.last_refresh_pool_size == before) return false;
    emit("bounds_refreshed", {{"pool_size", st_.pool.size()}, {"previous", before}});
    return true;
  }

  // ---- control quantities -------------------------------------------------

  void update_control_quantities() {
    st_.incumbent.reset();
    double max_ucb = 0.0;
    for (std::size_t i = 0; i < st_.pool.size(); ++i) {
      if (!in_play(i)) continue;
      const auto& b = st_.pool[i].bounds;
      if (!st_.incumbent || b.lcb > st_.pool[*st_.incumbent].bounds.lcb) st_.incumbent = i;
      max_ucb = std::max(max_ucb, b.ucb);
    }
    st_.epsilon =
        st_.incumbent ? std::max(0.0, max_ucb - st_.pool[*st_.incumbent].bounds.lcb) : 0.0;
    st_.gamma = gamma_for(st_.uniform_proposals);
  }

  double gamma_for(std::uint64_t uniform_proposals) const {
    const double k = static_cast<double>(std::max<std::uint64_t>(1, uniform_proposals));
    return std::min(1.0, std::log(1.0 / cfg_.gamma_delta()) / k);
  }

  static bool expansion_condition(double epsilon, double gamma, double c) noexcept {
    return c > 0.0 && epsilon * epsilon <= c * gamma;
  }

  bool expansion_due() const { return expansion_condition(st_.epsilon, st_.gamma, cfg_.c); }

  // ---- surrogate ----------------------------------------------------------

  /// Trains the forest if it is enabled and the retrain trigger fires.
  /// Returns whether a model is available.
  bool ensure_model() {
    if (!cfg_.use_surrogate) return false;
    if (surrogate_.due(st_.configs_with_two_samples)) {
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (const auto& a : st_.pool) {
        if (a.stats.m == 0) continue;
        x.push_back(space_.encode_features(a.id));
        y.push_back(std::clamp(*a.stats.mean(), 0.0, 1.0));
      }
      if (!x.empty()) {
        surrogate_.train(std::move(x), std::move(y), mix64(st_.seed, 0x747261696eULL + st_.trainings),
                         st_.configs_with_two_samples);
        ++st_.trainings;
        signatures_.clear();
      }
    }
    return surrogate_.has_model();
  }

  /// Draws a new template not in the pool (nor rejected by `exclude`). With
  /// the exploration probability, or when no model is available, the draw is
  /// uniform. Returns nullopt when every retry hit a duplicate.
  std::optional<Proposal> propose_expansion(
      const std::function<bool(const TemplateId&)>& exclude = {}) {
    bool uniform = bernoulli(st_.rng, cfg_.exploration_probability);
    if (!uniform && !ensure_model()) uniform = true;
    auto reject = [&](const TemplateId& id) { return contains(id) || (exclude && exclude(id)); };
    for (std::size_t attempt = 0; attempt < cfg_.proposal_retries; ++attempt) {
      std::optional<TemplateId> id;
      if (uniform) {
        id = space_.sample_uniform(st_.rng);
        if (reject(*id)) id.reset();
      } else {
        id = surrogate_.propose(space_, st_.rng, reject, cfg_.proposal_candidates,
                                proposal_penalty());
      }
      if (id) return Proposal{std::move(*id), uniform};
    }
    return std::nullopt;
  }

  // ---- repulsion ----------------------------------------------------------

  /// Arms whose neighbourhood is penalized: the certified set, widened by
  /// arms with lcb within epsilon_ref of the best lcb when epsilon_ref > 0.
  std::vector<std::size_t> reference_set() const {
    std::vector<std::size_t> ref;
    for (std::size_t i : st_.certified) ref.push_back(i);
    if (cfg_.repulsion.epsilon_ref > 0.0) {
      double best = 0.0;
      for (const auto& a : st_.pool) {
        if (a.status != ArmStatus::retired) best = std::max(best, a.bounds.lcb);
      }
      for (std::size_t i = 0; i < st_.pool.size(); ++i) {
        const auto& a = st_.pool[i];
        if (a.status == ArmStatus::active && a.stats.m > 0 &&
            a.bounds.lcb >= best - cfg_.repulsion.epsilon_ref) {
          ref.push_back(i);
        }
      }
    }
    return ref;
  }

  bool repulsion_active() const {
    return cfg_.repulsion.enabled && cfg_.repulsion.lambda > 0.0;
  }

  /// Repulsion applied to model-guided proposal candidates: lambda times the
  /// candidate's max proximity to the reference set.
  Surrogate::Penalty proposal_penalty() {
    if (!repulsion_active() || !surrogate_.has_model()) return {};
    auto ref = reference_set();
    if (ref.empty()) return {};
    std::vector<Forest::Signature> sigs;
    for (std::size_t r : ref) sigs.push_back(signature(r));
    const Forest* model = &surrogate_.model();
    const double lambda = cfg_.repulsion.lambda;
    return [model, sigs = std::move(sigs), lambda](const std::vector<double>& x) {
      auto sig = model->leaf_signature(x);
      double p = 0.0;
      for (const auto& r : sigs) p = std::max(p, Forest::proximity(sig, r));
      return lambda * p;
    };
  }

  const Forest::Signature& signature(std::size_t i) {
    auto it = signatures_.find(i);
    if (it == signatures_.end()) {
      it = signatures_
               .emplace(i, surrogate_.model().leaf_signature(space_.encode_features(st_.pool[i].id)))
               .first;
    }
    return it->second;
  }

  /// Penalty terms (max proximity to the reference set) for every pool arm,
  /// plus a function for templates not yet in the pool. All zero when
  /// repulsion is off or no model can be trained.
  struct Penalties {
    std::vector<double> pool;
    std::vector<Forest::Signature> reference;
    double of(const Forest* model, const Space& space, const TemplateId& id) const {
      if (!model || reference.empty()) return 0.0;
      auto sig = model->leaf_signature(space.encode_features(id));
      double p = 0.0;
      for (const auto& r : reference) p = std::max(p, Forest::proximity(sig, r));
      return p;
    }
    const Forest* model = nullptr;
  };

  Penalties penalties() {
    Penalties out;
    out.pool.assign(st_.pool.size(), 0.0);
    if (!repulsion_active()) return out;
    const auto ref = reference_set();
    if (ref.empty() || !ensure_model()) return out;
    out.model = &surrogate_.model();
    for (std::size_t r : ref) out.reference.push_back(signature(r));
    for (std::size_t i = 0; i < st_.pool.size(); ++i) {
      if (!in_play(i)) continue;
      const auto& sig = signature(i);
      double p = 0.0;
      for (std::size_t k = 0; k < ref.size(); ++k) {
        if (ref[k] == i) continue;
        p = std::max(p, Forest::proximity(sig, out.reference[k]));
      }
      out.pool[i] = p;
    }
    return out;
  }

  // ---- selection ----------------------------------------------------------

  /// Number of top arms in the leader set: K certified arms under adaptive
  /// certification, otherwise 1.
  std::size_t leader_set_size() const {
    if (cfg_.cert.kind != CertKind::adaptive) return 1;
    return std::max<std::size_t>(1, st_.certified.size());
  }

  std::vector<ArmView> views(std::uint64_t salt, const std::vector<double>& penalty) const {
    std::vector<ArmView> v(st_.pool.size());
    for (std::size_t i = 0; i < st_.pool.size(); ++i) {
      const auto& a = st_.pool[i];
      v[i].mean = a.stats.mean_or(0.0);
      v[i].lcb = a.bounds.lcb;
      v[i].ucb = a.bounds.ucb;
      v[i].penalty = penalty.empty() ? 0.0 : penalty[i];
      v[i].priority = mix64(salt, a.id_hash);
      v[i].eligible = in_play(i);
    }
    return v;
  }

  double lambda() const { return repulsion_active() ? cfg_.repulsion.lambda : 0.0; }

  /// One leader/challenger pick; ties broken by a fresh salt from the run RNG.
  std::optional<SelectedPair> select_pair() {
    const std::uint64_t salt = st_.rng();
    auto pen = penalties();
    auto v = views(salt, pen.pool);
    auto p = selection::pair(v, leader_set_size(), lambda());
    if (!p || !p->challenger) return std::nullopt;
    return p;
  }

  // ---- certification ------------------------------------------------------

  void certify_step() {
    switch (cfg_.cert.kind) {
      case CertKind::none: return;
      case CertKind::fixed:
        for (std::size_t i = 0; i < st_.pool.size(); ++i) {
          auto& a = st_.pool[i];
          if (a.status == ArmStatus::active && a.stats.m > 0 && a.bounds.lcb >= st_.threshold) {
            certify(i);
          }
        }
        return;
      case CertKind::adaptive: {
        std::vector<std::size_t> cand;
        for (std::size_t i = 0; i < st_.pool.size(); ++i) {
          const auto& a = st_.pool[i];
          if (a.status == ArmStatus::active && a.stats.m > 0 && a.bounds.lcb >= st_.threshold) {
            cand.push_back(i);
          }
        }
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
          return st_.pool[a].bounds.lcb > st_.pool[b].bounds.lcb;
        });
        for (std::size_t i : cand) {
          if (st_.pool[i].bounds.lcb < st_.threshold) break;
          certify(i);
          const double before = st_.threshold;
          st_.threshold = raised_threshold();
          if (st_.threshold > before) {
            emit("threshold_raised", {{"from", before}, {"to", st_.threshold},
                                      {"certified", st_.certified.size()}});
          }
        }
        return;
      }
    }
  }

  /// Evidence-balance rule: the largest t in [current, min certified lcb +
  /// mean certified radius] such that K times the mean samples the certified
  /// arms need to clear t is still at least what the best uncertified arm
  /// needs. Scans upward and stops at the first t where that fails.
  double raised_threshold() const {
    const double current = st_.threshold;
    if (st_.certified.empty()) return current;
    const double k = static_cast<double>(st_.certified.size());
    double min_lcb = 1.0;
    double mean_radius = 0.0;
    for (std::size_t i : st_.certified) {
      min_lcb = std::min(min_lcb, st_.pool[i].bounds.lcb);
      mean_radius += st_.pool[i].bounds.radius();
    }
    mean_radius /= k;
    const double upper = std::min(min_lcb + mean_radius, 1.0 - cfg_.adaptive_step);
    std::optional<std::size_t> challenger;
    for (std::size_t i = 0; i < st_.pool.size(); ++i) {
      const auto& a = st_.pool[i];
      if (a.status != ArmStatus::active || a.stats.m == 0) continue;
      if (!challenger || a.stats.mean_or(0) > st_.pool[*challenger].stats.mean_or(0)) {
        challenger = i;
      }
    }
    auto balance = [&](double t) {
      double a = 0.0;
      for (std::size_t i : st_.certified) {
        const auto& r = st_.pool[i];
        a += samples_to_reach(t, r.stats.mean_or(0), r.bounds.delta_i, cfg_.adaptive_floor);
      }
      a /= k;
      double b = 0.0;
      if (challenger) {
        const auto& r = st_.pool[*challenger];
        b = samples_to_reach(t, r.stats.mean_or(0), r.bounds.delta_i, cfg_.adaptive_floor);
      }
      return k * a - b;
    };
    double best = current;
    const int steps = static_cast<int>(std::floor((upper - current) / cfg_.adaptive_step));
    for (int s = 1; s <= steps; ++s) {
      const double t = current + s * cfg_.adaptive_step;
      if (balance(t) < 0.0) break;
      best = t;
    }
    return std::max(current, best);
  }

  void certify(std::size_t i) {
    auto& a = st_.pool[i];
    a.status = ArmStatus::certified;
    st_.certified.push_back(i);
    emit("certified", {{"arm", i},
                       {"lcb", a.bounds.lcb},
                       {"mean", a.stats.mean_or(0)},
                       {"m", a.stats.m},
                       {"threshold", st_.threshold}});
  }

  // ---- ranking ------------------------------------------------------------

  /// Certified and active arms in descending score; equal scores ordered by
  /// activation step, then template values.
  Ranking rank(RankBy by) const {
    Ranking out;
    for (std::size_t i = 0; i < st_.pool.size(); ++i) {
      const auto& a = st_.pool[i];
      if (a.status == ArmStatus::retired) continue;
      out.rows.push_back({i, by == RankBy::lcb ? a.bounds.lcb : a.stats.mean_or(0.0)});
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), [&](const RankedArm& x, const RankedArm& y) {
      if (x.score != y.score) return x.score > y.score;
      const auto& ax = st_.pool[x.index];
      const auto& ay = st_.pool[y.index];
      if (ax.activation_step != ay.activation_step) return ax.activation_step < ay.activation_step;
      return ax.id.values < ay.id.values;
    });
    for (std::size_t k = 0; k < out.rows.size(); ++k) {
      if (k == 0 || out.rows[k].score != out.rows[k - 1].score) out.group_starts.push_back(k);
    }
    out.group_starts.push_back(out.rows.size());
    return out;
  }

  // ---- persistence --------------------------------------------------------

  nlohmann::json state_to_json() const {
    nlohmann::json arms = nlohmann::json::array();
    for (const auto& a : st_.pool) {
      arms.push_back({{"template", space_.to_json(a.id)},
                      {"m", a.stats.m},
                      {"total", a.stats.total},
                      {"lcb", a.bounds.lcb},
                      {"ucb", a.bounds.ucb},
                      {"delta_i", a.bounds.delta_i},
                      {"n", a.bounds.pool_size_at_compute},
                      {"status", to_string(a.status)},
                      {"activation_step", a.activation_step},
                      {"uniform", a.uniform_origin}});
    }
    nlohmann::json j{{"arms", arms},
                     {"epsilon", st_.epsilon},
                     {"gamma", st_.gamma},
                     {"uniform_proposals", st_.uniform_proposals},
                     {"model_proposals", st_.model_proposals},
                     {"seed", st_.seed},
                     {"rng", rng_to_string(st_.rng)},
                     {"budget_used", st_.budget_used},
                     {"budget_total", st_.budget_total},
                     {"batches", st_.batches},
                     {"threshold", st_.threshold},
                     {"certified", st_.certified},
                     {"last_refresh_pool_size", st_.last_refresh_pool_size},
                     {"trainings", st_.trainings}};
    if (st_.incumbent) j["incumbent"] = *st_.incumbent;
    if (surrogate_.has_model()) {
      j["surrogate"] = {{"rows", surrogate_.rows()},
                        {"targets", surrogate_.targets()},
                        {"seed", surrogate_.seed()},
                        {"marker", surrogate_.marker()}};
    }
    return j;
  }

  void state_from_json(const nlohmann::json& j) {
    RunState s;
    for (const auto& a : j.at("arms")) {
      ArmRecord r;
      r.id = space_.from_json(a.at("template"));
      r.id_hash = stable_hash(r.id);
      r.stats = {a.at("m").get<std::uint64_t>(), a.at("total").get<double>()};
      r.bounds = {a.at("lcb").get<double>(), a.at("ucb").get<double>(),
                  a.at("delta_i").get<double>(), a.at("n").get<std::size_t>()};
      const auto status = a.at("status").get<std::string>();
      r.status = status == "certified" ? ArmStatus::certified
                 : status == "retired" ? ArmStatus::retired
                                       : ArmStatus::active;
      r.activation_step = a.at("activation_step").get<std::uint64_t>();
      r.uniform_origin = a.at("uniform").get<bool>();
      if (r.stats.m >= 2) ++s.configs_with_two_samples;
      s.index.emplace(r.id, s.pool.size());
      s.pool.push_back(std::move(r));
    }
    if (j.contains("incumbent")) s.incumbent = j["incumbent"].get<std::size_t>();
    s.epsilon = j.at("epsilon").get<double>();
    s.gamma = j.at("gamma").get<double>();
    s.uniform_proposals = j.at("uniform_proposals").get<std::uint64_t>();
    s.model_proposals = j.at("model_proposals").get<std::uint64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.rng = rng_from_string(j.at("rng").get<std::string>());
    s.budget_used = j.at("budget_used").get<std::uint64_t>();
    s.budget_total = j.at("budget_total").get<std::uint64_t>();
    s.batches = j.at("batches").get<std::uint64_t>();
    s.threshold = j.at("threshold").get<double>();
    s.certified = j.at("certified").get<std::vector<std::size_t>>();
    s.last_refresh_pool_size = j.at("last_refresh_pool_size").get<std::size_t>();
    s.trainings = j.at("trainings").get<std::uint64_t>();
    st_ = std::move(s);
    surrogate_.reset();
    signatures_.clear();
    if (j.contains("surrogate")) {
      const auto& m = j["surrogate"];
      surrogate_.train(m.at("rows").get<std::vector<std::vector<double>>>(),
                       m.at("targets").get<std::vector<double>>(), m.at("seed").get<std::uint64_t>(),
                       m.at("marker").get<std::size_t>());
    }
  }

 private:
  const Space& space_;
  OptimizerConfig cfg_;
  RunState st_;
  Surrogate surrogate_;
  TraceSink* sink_ = nullptr;
  std::optional<std::uint64_t> space_size_;
  std::unordered_map<std::size_t, Forest::Signature> signatures_;
};

}  // namespace hardspot
