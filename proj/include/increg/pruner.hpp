#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/log.hpp"
#include "increg/network.hpp"
#include "increg/scheduler.hpp"
#include "increg/sgd.hpp"
#include "increg/training.hpp"

namespace increg {

/// Trajectory of every group at every λ-update step, plus per-layer outcome.
struct PruneReport {
  struct Row {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t group_id = 0;
    double l1 = 0.0;
    double lambda = 0.0;
    std::size_t inst_rank = 0;
    double avg_rank = 0.0;
    bool pruned = false;
  };
  struct LayerSummary {
    std::size_t layer = 0;
    std::string name;
    GroupKind kind = GroupKind::column;
    std::size_t groups = 0;
    std::size_t target = 0;
    std::size_t pruned = 0;
    std::size_t converged_iter = 0;  // first iteration count at which the target was met
  };

  std::vector<Row> rows;
  std::vector<LayerSummary> layers;
  std::size_t pruning_iters = 0;
  std::size_t retrain_iters = 0;
  bool converged = false;
};

/// Thrown when some layer misses its target within the iteration budget. Carries the
/// trajectory recorded so far.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, PruneReport partial)
      : std::runtime_error(what), report(std::move(partial)) {}
  PruneReport report;
};

/// Per-layer incremental-regularization state driven by the training loop.
template <class T>
class IncRegPruner {
 public:
  IncRegPruner(const Network<T>& net, std::vector<PruneSchedule> schedules)
      : schedules_(std::move(schedules)) {
    // Layer order keeps report rows sorted by (step, layer, group).
    std::stable_sort(schedules_.begin(), schedules_.end(),
                     [](const PruneSchedule& a, const PruneSchedule& b) { return a.layer_id < b.layer_id; });
    std::vector<bool> seen(net.layers().size(), false);
    for (const auto& s : schedules_) {
      if (s.layer_id >= net.layers().size() || net.layer(s.layer_id).spec.kind != LayerKind::conv)
        throw ConfigError("schedule names layer " + std::to_string(s.layer_id) +
                          ", which is not a conv layer");
      if (net.layer(s.layer_id).spec.prune_exempt)
        throw ConfigError("schedule names exempt layer " + net.layer(s.layer_id).name);
      if (seen[s.layer_id]) throw ConfigError("layer scheduled twice");
      seen[s.layer_id] = true;
      auto lg = make_groups(net, s.layer_id, s.kind);
      validate_schedule(s, lg.groups.size());
      refresh_l1(net, lg);
      targets_.push_back(target_count(s.target_ratio, lg.groups.size()));
      inst_rank_.emplace_back(lg.groups.size(), 0);
      done_.push_back(lg.pruned_count() >= targets_.back());
      converged_iter_.push_back(0);
      groups_.push_back(std::move(lg));
    }
  }

  const std::vector<LayerGroups>& groups() const { return groups_; }
  std::vector<LayerGroups>& groups() { return groups_; }
  const std::vector<PruneSchedule>& schedules() const { return schedules_; }

  bool done() const { return std::all_of(done_.begin(), done_.end(), [](bool d) { return d; }); }

  /// Records the instantaneous L1 ranks of every layer into the running averages.
  void observe(const Network<T>& net) {
    for (std::size_t l = 0; l < groups_.size(); ++l) {
      refresh_l1(net, groups_[l]);
      inst_rank_[l] = rank_groups(groups_[l].groups);
      for (std::size_t g = 0; g < groups_[l].groups.size(); ++g)
        update_avg_rank(groups_[l].groups[g], inst_rank_[l][g]);
    }
  }

  /// λ recalculation for layers whose update interval divides `iter`. Layers that met
  /// their target instead decay the surviving factors by A toward zero. Appends one
  /// report row per group of each updated layer.
  void update(std::size_t iter, PruneReport* report,
              double lambda_cap = std::numeric_limits<double>::infinity()) {
    for (std::size_t l = 0; l < groups_.size(); ++l) {
      const auto& s = schedules_[l];
      if (iter % s.update_interval != 0) continue;
      auto& gs = groups_[l].groups;
      if (!done_[l]) {
        const auto rbar = final_rank(gs);
        for (std::size_t g = 0; g < gs.size(); ++g) {
          if (!gs[g].pruned) {
            update_lambda(gs[g], delta_lambda(rbar[g], s.target_ratio, gs.size(), s.speed));
            gs[g].lambda = std::min(gs[g].lambda, lambda_cap);
          }
        }
      } else {
        for (auto& g : gs)
          if (!g.pruned) update_lambda(g, -s.speed);
      }
      if (report) append_rows(l, iter, *report);
    }
  }

  /// Prunes groups that fell below epsilon, never past a layer's target.
  void prune(Network<T>& net, std::size_t iters_done) {
    for (std::size_t l = 0; l < groups_.size(); ++l) {
      if (done_[l]) continue;
      refresh_l1(net, groups_[l]);
      const std::size_t have = groups_[l].pruned_count();
      prune_converged(net, groups_[l], schedules_[l].epsilon, targets_[l] - have);
      if (groups_[l].pruned_count() >= targets_[l]) {
        done_[l] = true;
        converged_iter_[l] = iters_done;
      }
    }
  }

  void append_rows(std::size_t l, std::size_t step, PruneReport& report) const {
    const auto& lg = groups_[l];
    for (std::size_t g = 0; g < lg.groups.size(); ++g) {
      const auto& gs = lg.groups[g];
      report.rows.push_back({step, lg.layer_id, gs.group_id, gs.l1, gs.lambda, inst_rank_[l][g],
                             gs.avg_rank(), gs.pruned});
    }
  }

  void summarize(const Network<T>& net, PruneReport& report) const {
    report.layers.clear();
    for (std::size_t l = 0; l < groups_.size(); ++l) {
      const auto& lg = groups_[l];
      report.layers.push_back({lg.layer_id, net.layer(lg.layer_id).name, lg.kind,
                               lg.groups.size(), targets_[l], lg.pruned_count(),
                               converged_iter_[l]});
    }
  }

 private:
  std::vector<PruneSchedule> schedules_;
  std::vector<LayerGroups> groups_;
  std::vector<std::size_t> targets_;
  std::vector<std::vector<std::size_t>> inst_rank_;
  std::vector<bool> done_;
  std::vector<std::size_t> converged_iter_;
};

template <class T>
struct PruneOutcome {
  Network<T> net;
  std::vector<LayerGroups> groups;
  PruneReport report;
};

/// Largest λ_g for which momentum SGD on the group's quadratic term stays in the
/// middle of its stability range: lr·(λ + λ_g) = 1 + μ. Beyond 2(1 + μ) the iteration
/// diverges.
inline double stable_lambda_cap(const TrainConfig& cfg, std::size_t iter) {
  return std::max(0.0, (1.0 + cfg.momentum) / cfg.lr_at(iter) - cfg.weight_decay);
}

/// Copy of the groups with every factor cleared: masks only.
inline std::vector<LayerGroups> frozen_masks(std::vector<LayerGroups> groups) {
  for (auto& lg : groups)
    for (auto& g : lg.groups) g.lambda = 0.0;
  return groups;
}

/// Incremental-regularization pruning followed by masked retraining.
///
/// Every iteration: record instantaneous ranks; on update steps recompute λ_g from
/// the averaged ranks; take one SGD step on the regularized objective; prune groups
/// whose L1-norm fell below epsilon. Stops once every layer holds exactly its target
/// number of pruned groups, then retrains `retrain.max_iters` iterations with the
/// pruned groups frozen at zero. `prune_cfg.max_iters` bounds the pruning phase.
template <class T>
PruneOutcome<T> run_pruning(Network<T> net, const Dataset& data, const TrainConfig& prune_cfg,
                            std::span<const PruneSchedule> schedules, const TrainConfig& retrain,
                            std::size_t log_every = 0) {
  prune_cfg.validate();
  retrain.validate();
  IncRegPruner<T> pruner(net, std::vector<PruneSchedule>(schedules.begin(), schedules.end()));
  PruneReport report;
  BatchSampler sampler(data.size(), prune_cfg.batch_size, sampler_seed(net.seed()));

  std::size_t iter = 0;
  while (!pruner.done()) {
    if (iter >= prune_cfg.max_iters) {
      pruner.observe(net);
      pruner.summarize(net, report);
      report.pruning_iters = iter;
      std::string detail;
      for (const auto& l : report.layers)
        detail += " " + l.name + ":" + std::to_string(l.pruned) + "/" + std::to_string(l.target);
      throw ConvergenceError("pruning did not reach its targets within " +
                                 std::to_string(prune_cfg.max_iters) + " iterations;" + detail,
                             std::move(report));
    }
    pruner.observe(net);
    pruner.update(iter, &report, stable_lambda_cap(prune_cfg, iter));
    const auto idx = sampler.next();
    const double loss = train_step(net, gather_images<T>(data, idx), gather_labels(data, idx),
                                   prune_cfg, iter, pruner.groups());
    pruner.prune(net, iter + 1);
    ++iter;
    if (log_every && iter % log_every == 0) {
      std::string msg = "prune iter " + std::to_string(iter) + " loss " + std::to_string(loss);
      for (const auto& lg : pruner.groups())
        msg += " " + net.layer(lg.layer_id).name + ":" + std::to_string(lg.pruned_count());
      log_info(msg);
    }
  }
  pruner.observe(net);
  for (std::size_t l = 0; l < pruner.groups().size(); ++l) pruner.append_rows(l, iter, report);
  report.pruning_iters = iter;
  report.converged = true;

  const auto masks = frozen_masks(pruner.groups());
  train(net, data, retrain, masks);
  report.retrain_iters = retrain.max_iters;
  pruner.summarize(net, report);

  PruneOutcome<T> out{std::move(net), pruner.groups(), std::move(report)};
  for (auto& lg : out.groups) refresh_l1(out.net, lg);
  return out;
}

}  // namespace increg
