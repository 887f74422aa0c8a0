#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/log.hpp"

namespace increg {

/// Incremental-regularization settings for one conv layer.
struct PruneSchedule {
  std::size_t layer_id = 0;
  double target_ratio = 0.0;         // R_l, fraction of groups to remove
  double speed = 0.002;              // A, bound on |Δλ| per update
  double epsilon = 1e-5;             // a group is pruned once its L1-norm drops below this
  std::size_t update_interval = 10;  // iterations between λ recalculations
  GroupKind kind = GroupKind::column;
};

namespace detail {

/// R·N_g, snapped to the integer it is meant to be when it lands within rounding
/// noise of one (ratios such as 0.7 are not exact in binary).
inline double ratio_position(double ratio, std::size_t num_groups) {
  const double rn = ratio * static_cast<double>(num_groups);
  const double nearest = std::round(rn);
  return std::fabs(rn - nearest) <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, rn)
             ? nearest
             : rn;
}

}  // namespace detail

/// Number of groups a layer must end with pruned: R·N_g rounded to nearest, ties up.
inline std::size_t target_count(double ratio, std::size_t num_groups) {
  return static_cast<std::size_t>(std::floor(detail::ratio_position(ratio, num_groups) + 0.5));
}

/// Rejects schedules the Δλ law cannot run: R·N_g must be positive and at least two
/// groups must survive, i.e. N_g(1-R) - 1 > 0. A zero target needs no Δλ at all.
inline void validate_schedule(const PruneSchedule& s, std::size_t num_groups) {
  const std::string where = "schedule for layer " + std::to_string(s.layer_id) + ": ";
  if (!(s.target_ratio >= 0.0 && s.target_ratio < 1.0))
    throw ConfigError(where + "target ratio must lie in [0, 1)");
  if (!(s.speed > 0.0)) throw ConfigError(where + "speed A must be positive");
  if (!(s.epsilon > 0.0)) throw ConfigError(where + "epsilon must be positive");
  if (s.update_interval == 0) throw ConfigError(where + "update interval must be at least 1");
  if (num_groups == 0) throw ConfigError(where + "layer has no groups");
  const std::size_t target = target_count(s.target_ratio, num_groups);
  if (target >= num_groups) throw ConfigError(where + "target would prune every group");
  if (target == 0) return;
  const double rn = detail::ratio_position(s.target_ratio, num_groups);
  if (!(static_cast<double>(num_groups - 1) - rn > 0.0))
    throw ConfigError(where + "fewer than two groups would survive (N_g(1-R)-1 <= 0)");
}

/// Instantaneous ranks: ascending L1-norm, ties broken by group index.
inline std::vector<std::size_t> rank_groups(std::span<const GroupState> groups) {
  if (groups.empty()) throw InvalidArgument("rank_groups: empty group list");
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return groups[a].l1 < groups[b].l1; });
  std::vector<std::size_t> rank(groups.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

/// Adds one instantaneous rank to the group's running mean.
inline void update_avg_rank(GroupState& g, std::size_t rank) {
  g.rank_sum += static_cast<double>(rank);
  ++g.rank_count;
}

/// Re-ranks the running mean ranks into integers 0..N_g-1 (ties by index).
inline std::vector<std::size_t> final_rank(std::span<const GroupState> groups) {
  if (groups.empty()) throw InvalidArgument("final_rank: empty group list");
  for (const auto& g : groups)
    if (g.rank_count == 0)
      throw ContractViolation("final_rank: group " + std::to_string(g.group_id) +
                              " has never been ranked");
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return groups[a].avg_rank() < groups[b].avg_rank();
  });
  std::vector<std::size_t> rank(groups.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

/// Piecewise-linear increment of λ_g from the averaged rank r̄:
///   A (1 - r̄ / RN)                    for r̄ <= RN,
///   -A (r̄ - RN) / (N_g (1 - R) - 1)    for r̄ > RN,
/// so Δλ(0) = A, Δλ(RN) = 0 and Δλ(N_g - 1) = -A.
inline double delta_lambda(std::size_t rank, double ratio, std::size_t num_groups, double speed) {
  if (num_groups == 0 || rank >= num_groups)
    throw InvalidArgument("delta_lambda: rank " + std::to_string(rank) + " outside [0, " +
                          std::to_string(num_groups) + ")");
  const double rn = detail::ratio_position(ratio, num_groups);
  // N_g(1-R) - 1 written as (N_g - 1) - RN so the top rank evaluates to exactly -A.
  const double upper = static_cast<double>(num_groups - 1) - rn;
  if (!(rn > 0.0) || !(upper > 0.0))
    throw ConfigError("delta_lambda: degenerate denominator (R*N_g = " + std::to_string(rn) +
                      ", N_g(1-R)-1 = " + std::to_string(upper) + ")");
  const double r = static_cast<double>(rank);
  if (r <= rn) return speed * ((rn - r) / rn);
  return -speed * ((r - rn) / upper);
}

/// λ_g ← max(λ_g + Δλ, 0). Pruned groups keep their frozen factor.
inline void update_lambda(GroupState& g, double delta) {
  if (g.pruned) {
    log_warning("update_lambda: group " + std::to_string(g.group_id) + " of layer " +
                std::to_string(g.layer_id) + " is pruned; factor left unchanged");
    return;
  }
  g.lambda = std::max(g.lambda + delta, 0.0);
}

/// Marks groups whose cached L1-norm is below epsilon as pruned, smallest norm first
/// (ties by index), at most `limit` of them. Returns the newly pruned group ids.
inline std::vector<std::size_t> prune_converged(std::span<GroupState> groups, double epsilon,
                                                std::size_t limit =
                                                    std::numeric_limits<std::size_t>::max()) {
  if (!(epsilon > 0.0)) throw InvalidArgument("prune_converged: epsilon must be positive");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (!groups[i].pruned && groups[i].l1 < epsilon) candidates.push_back(i);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return groups[a].l1 < groups[b].l1; });
  if (candidates.size() > limit) candidates.resize(limit);
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::size_t> ids;
  for (auto i : candidates) {
    groups[i].pruned = true;
    groups[i].l1 = 0.0;
    ids.push_back(groups[i].group_id);
  }
  return ids;
}

/// Same, and zeroes the pruned weights, momentum entries and row biases in `net`.
template <class T>
std::vector<std::size_t> prune_converged(Network<T>& net, LayerGroups& lg, double epsilon,
                                         std::size_t limit =
                                             std::numeric_limits<std::size_t>::max()) {
  auto ids = prune_converged(std::span<GroupState>(lg.groups), epsilon, limit);
  for (auto id : ids) zero_group(net, lg.groups[id]);
  return ids;
}

}  // namespace increg
