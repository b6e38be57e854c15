#pragma once

// Random-forest regression over encoded templates, used to propose promising
// new templates and to measure shared-leaf proximity for repulsion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hardspot/rng.hpp"
#include "hardspot/search_space.hpp"

namespace hardspot {

struct ForestParams {
  std::size_t trees = 100;
  std::size_t min_leaf = 2;
  std::size_t max_features = 0;  // 0: ceil(sqrt(d))
  bool bootstrap = true;
};

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    double value = 0.0;
  };

  RegressionTree() = default;
  explicit RegressionTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.empty()) throw std::invalid_argument("tree without nodes");
  }

  /// Index of the leaf reached by `x`; x[feature] <= threshold goes left.
  std::uint32_t leaf_index(const std::vector<double>& x) const {
    std::uint32_t i = 0;
    while (nodes_[i].feature >= 0) {
      const auto& n = nodes_[i];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return i;
  }

  double predict(const std::vector<double>& x) const { return nodes_[leaf_index(x)].value; }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  /// Grows a tree on the multiset `rows` (bootstrap sample, duplicates allowed).
  static RegressionTree fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                            const std::vector<std::size_t>& rows, const ForestParams& params,
                            std::size_t max_features, Rng& rng) {
    const auto cols = columns(x);
    return fit(cols, y, rows, sorted_orders(cols), params, max_features, rng);
  }

  /// Same, on column-major features (cols[f][row]) with per-feature
  /// orderings of all rows (ascending value) precomputed.
  static RegressionTree fit(const std::vector<std::vector<double>>& cols,
                            const std::vector<double>& y, const std::vector<std::size_t>& rows,
                            const std::vector<std::vector<std::size_t>>& sorted,
                            const ForestParams& params, std::size_t max_features, Rng& rng) {
    RegressionTree tree;
    if (rows.empty()) throw std::invalid_argument("cannot fit a tree on no rows");
    std::vector<std::uint32_t> count(y.size(), 0);
    for (std::size_t r : rows) ++count[r];
    Builder b{params.min_leaf, max_features, rng, tree.nodes_};
    b.order.resize(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      b.order[f].reserve(rows.size());
      for (std::size_t r : sorted[f]) {
        for (std::uint32_t c = 0; c < count[r]; ++c) {
          b.order[f].push_back({cols[f][r], y[r], static_cast<std::uint32_t>(r)});
        }
      }
    }
    b.left.assign(y.size(), 0);
    b.buffer.resize(rows.size());
    b.grow(0, rows.size());
    return tree;
  }

  static std::vector<std::vector<double>> columns(const std::vector<std::vector<double>>& x) {
    const std::size_t d = x.empty() ? 0 : x.front().size();
    std::vector<std::vector<double>> cols(d, std::vector<double>(x.size()));
    for (std::size_t r = 0; r < x.size(); ++r) {
      for (std::size_t f = 0; f < d; ++f) cols[f][r] = x[r][f];
    }
    return cols;
  }

  static std::vector<std::vector<std::size_t>> sorted_orders(
      const std::vector<std::vector<double>>& cols) {
    std::vector<std::vector<std::size_t>> out(cols.size());
    for (std::size_t f = 0; f < cols.size(); ++f) {
      const auto& c = cols[f];
      out[f].resize(c.size());
      std::iota(out[f].begin(), out[f].end(), 0);
      std::stable_sort(out[f].begin(), out[f].end(),
                       [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
    }
    return out;
  }

 private:
  // Each node owns the same range [lo, hi) of every feature's ordering;
  // splitting stably partitions all of them. Entries carry the feature value
  // and target inline so split scans read memory sequentially.
  struct Entry {
    double value;
    double y;
    std::uint32_t row;
  };

  struct Builder {
    std::size_t min_leaf;
    std::size_t max_features;
    Rng& rng;
    std::vector<Node>& nodes;
    std::vector<std::vector<Entry>> order{};
    std::vector<char> left{};
    std::vector<Entry> buffer{};
    std::vector<std::size_t> features{};

    std::uint32_t grow(std::size_t lo, std::size_t hi) {
      const auto id = static_cast<std::uint32_t>(nodes.size());
      nodes.emplace_back();
      const std::size_t count = hi - lo;
      const auto& first = order.front();
      double sum = 0.0;
      double sq = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        sum += first[k].y;
        sq += first[k].y * first[k].y;
      }
      nodes[id].value = sum / static_cast<double>(count);
      const double sse = sq - sum * sum / static_cast<double>(count);
      if (count < 2 * min_leaf || sse <= 1e-12) return id;

      // Candidate features in random order; the first max_features are tried,
      // and further ones only while no valid split has been found.
      const std::size_t d = order.size();
      features.resize(d);
      std::iota(features.begin(), features.end(), 0);
      std::shuffle(features.begin(), features.end(), rng);

      int best_feature = -1;
      double best_threshold = 0.0;
      double best_gain = 1e-12;
      const double base = sum * sum / static_cast<double>(count);
      for (std::size_t fi = 0; fi < d; ++fi) {
        if (fi >= max_features && best_feature >= 0) break;
        const std::size_t f = features[fi];
        const Entry* e = order[f].data();
        double left_sum = 0.0;
        for (std::size_t k = lo; k + 1 < hi; ++k) {
          left_sum += e[k].y;
          const std::size_t nl = k + 1 - lo;
          const std::size_t nr = count - nl;
          if (nl < min_leaf || nr < min_leaf) continue;
          if (e[k].value == e[k + 1].value) continue;
          const double right_sum = sum - left_sum;
          // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - sum^2/n
          const double gain = left_sum * left_sum / static_cast<double>(nl) +
                              right_sum * right_sum / static_cast<double>(nr) - base;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = 0.5 * (e[k].value + e[k + 1].value);
          }
        }
      }
      if (best_feature < 0) return id;

      const auto bf = static_cast<std::size_t>(best_feature);
      std::size_t split = lo;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& e = order[bf][k];
        left[e.row] = e.value <= best_threshold ? 1 : 0;
        split += static_cast<std::size_t>(left[e.row]);
      }
      for (auto& ord : order) {
        std::size_t l = lo;
        std::size_t rgt = split;
        for (std::size_t k = lo; k < hi; ++k) {
          buffer[left[ord[k].row] ? l++ : rgt++] = ord[k];
        }
        std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo),
                  buffer.begin() + static_cast<std::ptrdiff_t>(hi),
                  ord.begin() + static_cast<std::ptrdiff_t>(lo));
      }
      nodes[id].feature = best_feature;
      nodes[id].threshold = best_threshold;
      const std::uint32_t l = grow(lo, split);
      const std::uint32_t r = grow(split, hi);
      nodes[id].left = l;
      nodes[id].right = r;
      return id;
    }
  };

  std::vector<Node> nodes_;
};

class Forest {
 public:
  using Signature = std::vector<std::uint32_t>;

  Forest() = default;
  explicit Forest(std::vector<RegressionTree> trees) : trees_(std::move(trees)) {
    if (trees_.empty()) throw std::invalid_argument("forest without trees");
  }

  static Forest train(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                      const ForestParams& params, std::uint64_t seed) {
    if (x.empty()) throw std::invalid_argument("cannot train a forest on no examples");
    if (x.size() != y.size()) throw std::invalid_argument("feature/target length mismatch");
    if (params.trees == 0) throw std::invalid_argument("forest needs at least one tree");
    const std::size_t d = x.front().size();
    const std::size_t mtry =
        params.max_features > 0
            ? std::min(params.max_features, d)
            : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    Rng rng(mix64(seed, 0x666f72657374ULL));
    std::vector<RegressionTree> trees;
    trees.reserve(params.trees);
    const auto cols = RegressionTree::columns(x);
    const auto sorted = RegressionTree::sorted_orders(cols);
    std::vector<std::size_t> rows(x.size());
    for (std::size_t t = 0; t < params.trees; ++t) {
      if (params.bootstrap) {
        for (auto& r : rows) r = uniform_index(rng, x.size());
      } else {
        std::iota(rows.begin(), rows.end(), 0);
      }
      trees.push_back(
          RegressionTree::fit(cols, y, rows, sorted, params, std::max<std::size_t>(mtry, 1), rng));
    }
    return Forest(std::move(trees));
  }

  std::size_t size() const noexcept { return trees_.size(); }
  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

  double predict(const std::vector<double>& x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }

  Signature leaf_signature(const std::vector<double>& x) const {
    Signature sig(trees_.size());
    for (std::size_t t = 0; t < trees_.size(); ++t) sig[t] = trees_[t].leaf_index(x);
    return sig;
  }

  static double proximity(const Signature& a, const Signature& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("signature size mismatch");
    std::size_t same = 0;
    for (std::size_t t = 0; t < a.size(); ++t) same += a[t] == b[t] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.size());
  }

  double proximity(const std::vector<double>& a, const std::vector<double>& b) const {
    return proximity(leaf_signature(a), leaf_signature(b));
  }

 private:
  std::vector<RegressionTree> trees_;
};

/// Training trigger: retrain once more configurations have at least two
/// samples than at the last training; with no model, as soon as there is one.
inline bool retrain_due(bool has_model, std::size_t marker, std::size_t current) noexcept {
  if (!has_model) return current >= 1;
  return current > marker;
}

/// Forest plus the bookkeeping needed to retrain lazily and propose templates.
class Surrogate {
 public:
  static constexpr std::size_t kDefaultCandidates = 64;

  Surrogate() = default;
  explicit Surrogate(ForestParams params) : params_(params) {}

  bool has_model() const noexcept { return model_.has_value(); }
  const Forest& model() const { return *model_; }
  std::size_t marker() const noexcept { return marker_; }
  std::uint64_t version() const noexcept { return version_; }
  const ForestParams& params() const noexcept { return params_; }

  bool due(std::size_t configs_with_two_samples) const noexcept {
    return retrain_due(has_model(), marker_, configs_with_two_samples);
  }

  void train(std::vector<std::vector<double>> x, std::vector<double> y, std::uint64_t seed,
             std::size_t configs_with_two_samples) {
    model_ = Forest::train(x, y, params_, seed);
    rows_ = std::move(x);
    targets_ = std::move(y);
    seed_ = seed;
    marker_ = configs_with_two_samples;
    ++version_;
  }

  void reset() {
    model_.reset();
    rows_.clear();
    targets_.clear();
    marker_ = 0;
    ++version_;
  }

  // Training inputs of the current model, kept so a snapshot can rebuild it.
  const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }
  const std::vector<double>& targets() const noexcept { return targets_; }
  std::uint64_t seed() const noexcept { return seed_; }

  using Penalty = std::function<double(const std::vector<double>& features)>;

  /// Best of `candidates` uniform draws by predicted utility minus `penalty`,
  /// skipping templates for which `exclude` holds; ties broken by `rng`.
  /// Without a model this is a single uniform draw. Returns nullopt when
  /// every draw was excluded.
  std::optional<TemplateId> propose(const Space& space, Rng& rng,
                                    const std::function<bool(const TemplateId&)>& exclude,
                                    std::size_t candidates = kDefaultCandidates,
                                    const Penalty& penalty = {}) const {
    if (!model_) {
      auto id = space.sample_uniform(rng);
      if (exclude && exclude(id)) return std::nullopt;
      return id;
    }
    std::optional<TemplateId> best;
    double best_score = -1.0;
    std::size_t ties = 0;
    for (std::size_t k = 0; k < candidates; ++k) {
      auto id = space.sample_uniform(rng);
      if (exclude && exclude(id)) continue;
      const auto x = space.encode_features(id);
      const double score = model_->predict(x) - (penalty ? penalty(x) : 0.0);
      if (!best || score > best_score) {
        best = std::move(id);
        best_score = score;
        ties = 1;
      } else if (score == best_score) {
        ++ties;
        if (uniform_index(rng, ties) == 0) best = std::move(id);
      }
    }
    return best;
  }

 private:
  ForestParams params_;
  std::optional<Forest> model_;
  std::vector<std::vector<double>> rows_;
  std::vector<double> targets_;
  std::uint64_t seed_ = 0;
  std::size_t marker_ = 0;
  std::uint64_t version_ = 0;
};

}  // namespace hardspot
