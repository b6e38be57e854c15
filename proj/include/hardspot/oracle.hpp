#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/expression.hpp"
#include "hardspot/rng.hpp"
#include "hardspot/search_space.hpp"

namespace hardspot {

/// Unrecoverable backend condition (exhausted script, unspawnable process).
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UtilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Failure { timeout, generation_failure, unparseable };

inline const char* to_string(Failure f) noexcept {
  switch (f) {
    case Failure::timeout: return "timeout";
    case Failure::generation_failure: return "generation_failure";
    case Failure::unparseable: return "unparseable";
  }
  return "?";
}

inline std::optional<Failure> failure_from_string(std::string_view s) {
  if (s == "timeout") return Failure::timeout;
  if (s == "generation_failure") return Failure::generation_failure;
  if (s == "unparseable") return Failure::unparseable;
  return std::nullopt;
}

struct Outcome {
  std::optional<bool> correct;
  std::map<std::string, double> metrics;
  std::optional<Failure> failure;

  static Outcome graded(bool is_correct) { return {is_correct, {}, std::nullopt}; }
  static Outcome failed(Failure f) { return {std::nullopt, {}, f}; }

  friend bool operator==(const Outcome&, const Outcome&) = default;
};

inline nlohmann::json outcome_to_json(const Outcome& o) {
  nlohmann::json j = nlohmann::json::object();
  if (o.correct) j["correct"] = *o.correct;
  if (!o.metrics.empty()) j["metrics"] = o.metrics;
  if (o.failure) j["failure"] = to_string(*o.failure);
  return j;
}

/// Parses a response/outcome record. A record with neither a grade, metrics
/// nor a failure tag is a generation failure.
inline Outcome outcome_from_json(const nlohmann::json& j) {
  Outcome o;
  if (j.contains("correct") && j["correct"].is_boolean()) o.correct = j["correct"].get<bool>();
  if (j.contains("metrics") && j["metrics"].is_object()) {
    for (const auto& [k, v] : j["metrics"].items()) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        return Outcome::failed(Failure::generation_failure);
      }
      o.metrics[k] = v.get<double>();
    }
  }
  if (j.contains("failure") && !j["failure"].is_null()) {
    auto f = j["failure"].is_string() ? failure_from_string(j["failure"].get<std::string>())
                                      : std::nullopt;
    o.failure = f.value_or(Failure::generation_failure);
  }
  if (!o.correct && o.metrics.empty() && !o.failure) o.failure = Failure::generation_failure;
  return o;
}

// ---------------------------------------------------------------------------
// Utilities

enum class UtilityKind { error_rate, complexity_weighted_error, custom_expression };

struct UtilitySpec {
  UtilityKind kind = UtilityKind::error_rate;
  std::string depth_param = "depth";
  std::string children_param = "children";
  std::optional<expr::Expression> expression;
  /// Failed evaluations (timeouts, unparseable answers, ...) score as a
  /// correct answer. Custom utilities may turn this off and read `failed`.
  bool failures_as_correct = true;

  static UtilitySpec error_rate() { return {}; }
  static UtilitySpec complexity_weighted(std::string depth = "depth",
                                         std::string children = "children") {
    UtilitySpec u;
    u.kind = UtilityKind::complexity_weighted_error;
    u.depth_param = std::move(depth);
    u.children_param = std::move(children);
    return u;
  }
  static UtilitySpec custom(std::string_view text, bool failures_as_correct = true) {
    UtilitySpec u;
    u.kind = UtilityKind::custom_expression;
    u.expression = expr::Expression::parse(text);
    u.failures_as_correct = failures_as_correct;
    return u;
  }
};

namespace detail {

inline double accuracy_of(const Outcome& o) {
  if (o.correct) return *o.correct ? 1.0 : 0.0;
  if (auto it = o.metrics.find("accuracy"); it != o.metrics.end()) {
    return std::clamp(it->second, 0.0, 1.0);
  }
  if (auto it = o.metrics.find("correct"); it != o.metrics.end()) {
    return it->second != 0.0 ? 1.0 : 0.0;
  }
  throw UtilityError("outcome carries neither a grade nor an accuracy metric");
}

inline double param_value(const Space& space, const TemplateId& id, const std::string& name) {
  auto idx = space.index_of(name);
  if (!idx) throw UtilityError("space has no parameter named '" + name + "'");
  if (space.param(*idx).kind == ParamKind::categorical) {
    throw UtilityError("parameter '" + name + "' is categorical, expected a number");
  }
  return id.values.at(*idx);
}

}  // namespace detail

/// Scalar utility in [0,1] of one evaluation outcome.
inline double utility(const UtilitySpec& spec, const Outcome& outcome, const TemplateId& id,
                      const Space& space) {
  const bool failed = outcome.failure.has_value();
  switch (spec.kind) {
    case UtilityKind::error_rate:
      if (failed) return 0.0;
      return 1.0 - detail::accuracy_of(outcome);
    case UtilityKind::complexity_weighted_error: {
      // (1 - acc) / log2(children^depth), in log space
      const double depth = detail::param_value(space, id, spec.depth_param);
      const double children = detail::param_value(space, id, spec.children_param);
      const double complexity = depth * std::log2(children);
      if (!(complexity > 0.0)) {
        throw UtilityError("complexity-weighted error undefined for depth=" +
                           std::to_string(depth) + ", children=" + std::to_string(children));
      }
      if (failed) return 0.0;
      return std::clamp((1.0 - detail::accuracy_of(outcome)) / complexity, 0.0, 1.0);
    }
    case UtilityKind::custom_expression: {
      if (!spec.expression) throw UtilityError("custom utility without an expression");
      if (failed && spec.failures_as_correct) return 0.0;
      const auto& e = *spec.expression;
      auto lookup = [&](std::size_t slot) -> expr::Value {
        const std::string& name = e.identifiers()[slot];
        if (name == "failed") return failed ? 1.0 : 0.0;
        if (name == "correct") return outcome.correct ? (*outcome.correct ? 1.0 : 0.0) : 0.0;
        if (auto it = outcome.metrics.find(name); it != outcome.metrics.end()) return it->second;
        if (auto idx = space.index_of(name)) return space.expression_value(id, *idx);
        throw UtilityError("custom utility references unknown name '" + name + "'");
      };
      double v = 0.0;
      try {
        v = e.evaluate_number(lookup);
      } catch (const expr::ExpressionError& ex) {
        throw UtilityError(ex.what());
      }
      if (!std::isfinite(v)) throw UtilityError("custom utility is not finite: " + e.text());
      return std::clamp(v, 0.0, 1.0);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Backends

struct EvalRequest {
  TemplateId id;
  std::uint64_t instance_seed = 0;  // within-template randomness
  std::uint64_t draw_index = 0;     // how many draws of `id` preceded this one
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual Outcome evaluate(const EvalRequest& request) = 0;

  /// Evaluates all requests with up to `width` in flight; results follow the
  /// request order.
  virtual std::vector<Outcome> evaluate_batch(std::span<const EvalRequest> requests,
                                              std::size_t width) {
    std::vector<Outcome> out(requests.size());
    if (width <= 1 || requests.size() <= 1) {
      for (std::size_t i = 0; i < requests.size(); ++i) out[i] = evaluate(requests[i]);
      return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
      std::vector<std::jthread> workers;
      for (std::size_t w = 0; w < std::min(width, requests.size()); ++w) {
        workers.emplace_back([&] {
          for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
              out[i] = evaluate(requests[i]);
            } catch (...) {
              std::lock_guard lock(error_mutex);
              if (!error) error = std::current_exception();
            }
          }
        });
      }
    }
    if (error) std::rethrow_exception(error);
    return out;
  }
};

using MeanFunction = std::function<double(const TemplateId&)>;

/// Bernoulli answers: incorrect with probability mean(id), so error-rate
/// utility has mean mean(id). Each call's randomness is a pure function of
/// (backend seed, instance seed), so results do not depend on dispatch order.
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(MeanFunction mean, std::uint64_t seed) : mean_(std::move(mean)), seed_(seed) {}

  Outcome evaluate(const EvalRequest& request) override {
    const double p_error = std::clamp(mean_(request.id), 0.0, 1.0);
    const double u = to_unit(mix64(seed_, request.instance_seed));
    return Outcome::graded(!(u < p_error));
  }

  double mean(const TemplateId& id) const { return std::clamp(mean_(id), 0.0, 1.0); }

 private:
  MeanFunction mean_;
  std::uint64_t seed_;
};

/// Replays recorded outcomes: the k-th draw of a template returns its k-th
/// recorded outcome.
class ScriptedBackend final : public Backend {
 public:
  using Table = std::unordered_map<TemplateId, std::vector<Outcome>, TemplateIdHash>;

  explicit ScriptedBackend(Table table) : table_(std::move(table)) {}

  Outcome evaluate(const EvalRequest& request) override {
    auto it = table_.find(request.id);
    if (it == table_.end()) throw BackendError("scripted backend has no outcomes for a template");
    if (request.draw_index >= it->second.size()) {
      throw BackendError("scripted outcomes exhausted after " +
                         std::to_string(it->second.size()) + " draws");
    }
    return it->second[request.draw_index];
  }

  /// JSON form: [{"template": {...}, "outcomes": [{...}, ...]}, ...]
  static ScriptedBackend from_json(const nlohmann::json& j, const Space& space) {
    Table table;
    for (const auto& row : j) {
      auto& list = table[space.from_json(row.at("template"))];
      for (const auto& o : row.at("outcomes")) list.push_back(outcome_from_json(o));
    }
    return ScriptedBackend(std::move(table));
  }

 private:
  Table table_;
};

}  // namespace hardspot
