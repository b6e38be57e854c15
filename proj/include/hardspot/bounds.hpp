#pragma once

// Anytime confidence bounds on per-template mean utility in [0,1].
//
// Each arm i with m_i samples in a pool of n arms gets its own confidence
// level delta_i = delta / (26.71 n^2 m_i^2) and a two-sided Hoeffding interval
// of radius sqrt(ln(2/delta_i) / (2 m_i)), clipped to [0,1].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace hardspot {

inline constexpr double kDeltaAllocationConstant = 26.71;
inline constexpr double kRefreshGrowthFactor = 1.5;

struct ArmStats {
  std::uint64_t m = 0;
  double total = 0.0;

  std::optional<double> mean() const noexcept {
    if (m == 0) return std::nullopt;
    return total / static_cast<double>(m);
  }
  /// Empirical mean, or `fallback` for an unsampled arm.
  double mean_or(double fallback) const noexcept {
    return m == 0 ? fallback : total / static_cast<double>(m);
  }

  friend bool operator==(const ArmStats&, const ArmStats&) = default;
};

struct Bounds {
  double lcb = 0.0;
  double ucb = 1.0;
  double delta_i = 1.0;  // 1.0 marks vacuous bounds (m = 0)
  std::size_t pool_size_at_compute = 0;

  double radius() const noexcept { return 0.5 * (ucb - lcb); }

  friend bool operator==(const Bounds&, const Bounds&) = default;
};

inline double per_arm_delta(double delta, std::size_t n, std::uint64_t m) {
  if (m == 0) throw std::invalid_argument("per_arm_delta: arm has no samples");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("per_arm_delta: delta outside (0,1)");
  if (n == 0) throw std::invalid_argument("per_arm_delta: empty pool");
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  return delta / (kDeltaAllocationConstant * nn * nn * mm * mm);
}

inline double hoeffding_radius(double delta_i, std::uint64_t m) {
  return std::sqrt(std::log(2.0 / delta_i) / (2.0 * static_cast<double>(m)));
}

inline Bounds compute_bounds(const ArmStats& stats, double delta, std::size_t n) {
  Bounds b;
  b.pool_size_at_compute = n;
  if (stats.m == 0) return b;
  b.delta_i = per_arm_delta(delta, n, stats.m);
  const double mean = std::clamp(stats.total / static_cast<double>(stats.m), 0.0, 1.0);
  const double r = hoeffding_radius(b.delta_i, stats.m);
  b.lcb = std::max(0.0, mean - r);
  b.ucb = std::min(1.0, mean + r);
  return b;
}

inline ArmStats record_observation(ArmStats stats, double y) {
  if (!(y >= 0.0 && y <= 1.0)) {
    throw std::out_of_range("utility " + std::to_string(y) + " outside [0,1]");
  }
  ++stats.m;
  stats.total += y;
  return stats;
}

/// True once the pool has grown by the refresh factor since `last_refresh`.
inline bool refresh_due(std::size_t pool_size, std::size_t last_refresh) noexcept {
  // pool >= 1.5 * last, in integers
  return 2 * pool_size >= 3 * last_refresh && pool_size > last_refresh;
}

/// Recomputes bounds of every arm with at least two samples at the current
/// pool size once the pool has grown 1.5x since the last refresh. `Pool` is a
/// range of records exposing `.stats` and `.bounds`. Returns the new marker.
template <class Pool>
std::size_t deferred_refresh(Pool& pool, std::size_t last_refresh_pool_size, double delta) {
  const std::size_t n = std::size(pool);
  if (!refresh_due(n, last_refresh_pool_size)) return last_refresh_pool_size;
  for (auto& arm : pool) {
    if (arm.stats.m < 2) continue;
    arm.bounds = compute_bounds(arm.stats, delta, n);
  }
  return n;
}

}  // namespace hardspot
