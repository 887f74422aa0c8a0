#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "increg/error.hpp"
#include "increg/network.hpp"

namespace increg {

/// How a conv layer's lowered weight matrix is split into prunable groups.
enum class GroupKind {
  row,      // one filter
  column,   // one (c, kh, kw) position across all filters
  channel,  // the H_k*W_k block of columns reading one input channel
};

inline std::string to_string(GroupKind k) {
  switch (k) {
    case GroupKind::row: return "row";
    case GroupKind::column: return "column";
    case GroupKind::channel: return "channel";
  }
  return "?";
}

inline GroupKind parse_group_kind(std::string_view s) {
  if (s == "row" || s == "filter") return GroupKind::row;
  if (s == "column" || s == "col" || s == "shape") return GroupKind::column;
  if (s == "channel") return GroupKind::channel;
  throw ConfigError("unknown group kind '" + std::string(s) + "'");
}

/// One weight group and its incremental-regularization bookkeeping.
struct GroupState {
  std::size_t layer_id = 0;
  std::size_t group_id = 0;
  std::vector<std::size_t> members;       // flat indices into the layer's weight matrix
  std::vector<std::size_t> bias_members;  // filters whose bias dies with the group (row kind)
  double lambda = 0.0;
  double rank_sum = 0.0;
  std::size_t rank_count = 0;
  bool pruned = false;
  double l1 = 0.0;

  double avg_rank() const {
    return rank_count == 0 ? 0.0 : rank_sum / static_cast<double>(rank_count);
  }
};

/// All groups of one conv layer.
struct LayerGroups {
  std::size_t layer_id = 0;
  GroupKind kind = GroupKind::column;
  std::vector<GroupState> groups;

  std::size_t pruned_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.pruned ? 1 : 0;
    return n;
  }
};

/// Partitions the weights of conv layer `layer_id` into groups of the given kind.
template <class T>
LayerGroups make_groups(const Network<T>& net, std::size_t layer_id, GroupKind kind) {
  detail::require(layer_id < net.layers().size(), "make_groups: layer index out of range");
  const auto& layer = net.layer(layer_id);
  detail::require(layer.spec.kind == LayerKind::conv,
                  "make_groups: " + layer.name + " is not a conv layer");
  const std::size_t rows = layer.weight.rows(), cols = layer.weight.cols();
  LayerGroups out{layer_id, kind, {}};
  auto add = [&](std::vector<std::size_t> members, std::vector<std::size_t> bias) {
    GroupState g;
    g.layer_id = layer_id;
    g.group_id = out.groups.size();
    g.members = std::move(members);
    g.bias_members = std::move(bias);
    out.groups.push_back(std::move(g));
  };
  switch (kind) {
    case GroupKind::row:
      for (std::size_t f = 0; f < rows; ++f) {
        std::vector<std::size_t> m(cols);
        for (std::size_t j = 0; j < cols; ++j) m[j] = f * cols + j;
        add(std::move(m), {f});
      }
      break;
    case GroupKind::column:
      for (std::size_t j = 0; j < cols; ++j) {
        std::vector<std::size_t> m(rows);
        for (std::size_t f = 0; f < rows; ++f) m[f] = f * cols + j;
        add(std::move(m), {});
      }
      break;
    case GroupKind::channel:
      for (std::size_t c = 0; c < layer.geom.channels; ++c) {
        std::vector<std::size_t> m;
        for (std::size_t f = 0; f < rows; ++f)
          for (std::size_t j = 0; j < cols; ++j)
            if (layer.col_map[j].channel == c) m.push_back(f * cols + j);
        if (!m.empty()) add(std::move(m), {});
      }
      break;
  }
  return out;
}

template <class T>
double group_l1(const Matrix<T>& weight, const GroupState& g) {
  double s = 0.0;
  for (auto m : g.members) s += std::fabs(static_cast<double>(weight.data()[m]));
  return s;
}

/// Refreshes the cached L1-norm of every group in the layer.
template <class T>
void refresh_l1(const Network<T>& net, LayerGroups& lg) {
  const auto& w = net.layer(lg.layer_id).weight;
  for (auto& g : lg.groups) g.l1 = group_l1(w, g);
}

/// Zeroes a group's weights, momentum and (row kind) bias.
template <class T>
void zero_group(Network<T>& net, const GroupState& g) {
  auto& layer = net.layer(g.layer_id);
  for (auto m : g.members) {
    layer.weight.data()[m] = T{};
    layer.weight_momentum.data()[m] = T{};
  }
  for (auto f : g.bias_members) {
    layer.bias[f] = T{};
    layer.bias_momentum[f] = T{};
  }
}

}  // namespace increg
