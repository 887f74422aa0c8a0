#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/gemm.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"

namespace increg {

/// What survives in each parameterized layer. For conv layers `keep_rows` are
/// filters and `keep_cols` lowered columns; for fully connected layers `keep_rows`
/// are outputs (always all of them) and `keep_cols` input features. Indices refer to
/// the network the plan was built from, ascending.
struct CompactPlan {
  struct LayerPlan {
    std::size_t layer = 0;
    LayerKind kind = LayerKind::conv;
    std::vector<std::size_t> keep_rows;
    std::vector<std::size_t> keep_cols;
    std::size_t rows = 0;  // before compaction
    std::size_t cols = 0;
  };
  std::vector<LayerPlan> layers;

  bool identity() const {
    return std::all_of(layers.begin(), layers.end(), [](const LayerPlan& p) {
      return p.keep_rows.size() == p.rows && p.keep_cols.size() == p.cols;
    });
  }

  const LayerPlan* find(std::size_t layer) const {
    for (const auto& p : layers)
      if (p.layer == layer) return &p;
    return nullptr;
  }
};

namespace detail {

inline std::vector<std::size_t> complement(std::size_t n, const std::set<std::size_t>& drop) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (!drop.count(i)) keep.push_back(i);
  return keep;
}

/// Index of the next/previous layer with parameters, skipping relu and pooling.
template <class T>
std::optional<std::size_t> next_param_layer(const Network<T>& net, std::size_t i) {
  for (std::size_t k = i + 1; k < net.layers().size(); ++k)
    if (net.layer(k).has_params()) return k;
  return std::nullopt;
}

template <class T>
std::optional<std::size_t> prev_param_layer(const Network<T>& net, std::size_t i) {
  for (std::size_t k = i; k-- > 0;)
    if (net.layer(k).has_params()) return k;
  return std::nullopt;
}

}  // namespace detail

/// Turns pruned groups into kept index sets, propagating removed filters into the
/// next layer (row kind) and removed input channels into the producing filters
/// (channel kind). Throws InconsistentState when a pruned group still holds a
/// nonzero weight or bias.
template <class T>
CompactPlan build_plan(const Network<T>& net, std::span<const LayerGroups> groups) {
  const std::size_t L = net.layers().size();
  std::vector<std::set<std::size_t>> drop_rows(L), drop_cols(L);
  std::vector<bool> seen(L, false);

  for (const auto& lg : groups) {
    if (lg.layer_id >= L || net.layer(lg.layer_id).spec.kind != LayerKind::conv)
      throw InconsistentState("build_plan: groups refer to a non-conv layer");
    if (seen[lg.layer_id]) throw InconsistentState("build_plan: layer grouped twice");
    seen[lg.layer_id] = true;
    const auto& layer = net.layer(lg.layer_id);
    const std::size_t cols = layer.weight.cols();
    for (const auto& g : lg.groups) {
      if (!g.pruned) continue;
      for (auto m : g.members) {
        if (m >= layer.weight.size())
          throw InconsistentState("build_plan: group member outside " + layer.name);
        if (layer.weight.data()[m] != T{})
          throw InconsistentState("build_plan: pruned group " + std::to_string(g.group_id) +
                                  " of " + layer.name + " holds a nonzero weight");
      }
      for (auto f : g.bias_members)
        if (layer.bias.at(f) != T{})
          throw InconsistentState("build_plan: pruned filter " + std::to_string(f) + " of " +
                                  layer.name + " has a nonzero bias");
      switch (lg.kind) {
        case GroupKind::row:
          drop_rows[lg.layer_id].insert(g.members.front() / cols);
          break;
        case GroupKind::column:
          drop_cols[lg.layer_id].insert(g.members.front() % cols);
          break;
        case GroupKind::channel: {
          const std::size_t channel = layer.col_map[g.members.front() % cols].channel;
          for (auto m : g.members) drop_cols[lg.layer_id].insert(m % cols);
          // The producing filter now feeds nothing.
          if (auto p = detail::prev_param_layer(net, lg.layer_id);
              p && net.layer(*p).spec.kind == LayerKind::conv)
            drop_rows[*p].insert(channel);
          break;
        }
      }
    }
  }

  // A removed filter's output map is identically zero; its consumers lose the inputs.
  for (std::size_t i = 0; i < L; ++i) {
    if (drop_rows[i].empty()) continue;
    const auto k = detail::next_param_layer(net, i);
    if (!k) continue;
    const auto& next = net.layer(*k);
    if (next.spec.kind == LayerKind::conv) {
      for (std::size_t j = 0; j < next.col_map.size(); ++j)
        if (drop_rows[i].count(next.col_map[j].channel)) drop_cols[*k].insert(j);
    } else {
      const std::size_t per = next.in.h * next.in.w;
      for (auto f : drop_rows[i])
        for (std::size_t q = 0; q < per; ++q) drop_cols[*k].insert(f * per + q);
    }
  }

  CompactPlan plan;
  for (std::size_t i = 0; i < L; ++i) {
    const auto& layer = net.layer(i);
    if (!layer.has_params()) continue;
    CompactPlan::LayerPlan p;
    p.layer = i;
    p.kind = layer.spec.kind;
    p.rows = layer.weight.rows();
    p.cols = layer.weight.cols();
    p.keep_rows = detail::complement(p.rows, drop_rows[i]);
    p.keep_cols = detail::complement(p.cols, drop_cols[i]);
    if (p.keep_rows.empty() || p.keep_cols.empty())
      throw InconsistentState("build_plan: " + layer.name + " would lose every row or column");
    plan.layers.push_back(std::move(p));
  }
  return plan;
}

/// Physically removes the dropped rows and columns. Kept weights are copied
/// unchanged; activation shapes of relu/pool layers follow the conv outputs.
template <class T>
Network<T> compact(const Network<T>& net, const CompactPlan& plan) {
  std::vector<Layer<T>> out;
  std::vector<std::size_t> channel_remap;  // old input channel -> new index, or npos
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  Shape3 shape = net.input_shape();
  channel_remap.resize(shape.c);
  for (std::size_t c = 0; c < shape.c; ++c) channel_remap[c] = c;

  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& src = net.layer(i);
    Layer<T> dst = src;
    dst.in = shape;
    if (src.has_params()) {
      const auto* p = plan.find(i);
      if (!p || p->rows != src.weight.rows() || p->cols != src.weight.cols())
        throw InvalidArgument("compact: plan does not match layer " + src.name);
      for (auto r : p->keep_rows)
        if (r >= p->rows) throw InvalidArgument("compact: row index outside " + src.name);
      for (auto c : p->keep_cols)
        if (c >= p->cols) throw InvalidArgument("compact: column index outside " + src.name);
      dst.weight = gather(src.weight, p->keep_rows, p->keep_cols);
      dst.weight_momentum = gather(src.weight_momentum, p->keep_rows, p->keep_cols);
      dst.bias.clear();
      dst.bias_momentum.clear();
      for (auto r : p->keep_rows) {
        dst.bias.push_back(src.bias[r]);
        dst.bias_momentum.push_back(src.bias_momentum[r]);
      }
      if (src.spec.kind == LayerKind::conv) {
        dst.col_map.clear();
        for (auto j : p->keep_cols) {
          auto ci = src.col_map[j];
          if (ci.channel >= channel_remap.size() || channel_remap[ci.channel] == npos)
            throw InvalidArgument("compact: " + src.name + " keeps a column of a removed channel");
          ci.channel = channel_remap[ci.channel];
          dst.col_map.push_back(ci);
        }
        dst.geom.channels = shape.c;
        dst.spec.filters = p->keep_rows.size();
        dst.out = {p->keep_rows.size(), src.out.h, src.out.w};
        channel_remap.assign(src.out.c, npos);
        for (std::size_t k = 0; k < p->keep_rows.size(); ++k) channel_remap[p->keep_rows[k]] = k;
      } else {
        // Features of removed channels must be exactly the dropped inputs.
        const std::size_t per = src.in.h * src.in.w;
        std::vector<std::size_t> expected;
        for (std::size_t f = 0; f < src.in.size(); ++f)
          if (channel_remap[f / per] != npos) expected.push_back(f);
        if (expected != p->keep_cols)
          throw InvalidArgument("compact: " + src.name + " inputs disagree with upstream channels");
        dst.out = src.out;
        channel_remap.assign(dst.out.c, 0);
        for (std::size_t k = 0; k < dst.out.c; ++k) channel_remap[k] = k;
      }
    } else {
      dst.out = {shape.c, src.out.h, src.out.w};
    }
    shape = dst.out;
    out.push_back(std::move(dst));
  }
  return Network<T>::from_layers(net.input_shape(), std::move(out), net.seed());
}

/// Floating-point operations per sample: 2·rows·cols·H_out·W_out for conv,
/// 2·inputs·outputs for fully connected.
struct FlopsAccount {
  struct Entry {
    std::size_t layer = 0;
    std::string name;
    LayerKind kind = LayerKind::conv;
    std::uint64_t base = 0;
    std::uint64_t pruned = 0;
    double ratio() const { return pruned == 0 ? 0.0 : static_cast<double>(base) / static_cast<double>(pruned); }
  };
  std::vector<Entry> layers;

  std::uint64_t total_base() const { return sum(false, {}); }
  std::uint64_t total_pruned() const { return sum(true, {}); }
  std::uint64_t conv_base() const { return sum(false, LayerKind::conv); }
  std::uint64_t conv_pruned() const { return sum(true, LayerKind::conv); }
  double ratio() const { return divide(total_base(), total_pruned()); }
  double conv_ratio() const { return divide(conv_base(), conv_pruned()); }

  /// Ratio restricted to the named layer indices.
  double ratio_over(std::span<const std::size_t> ids) const {
    std::uint64_t b = 0, p = 0;
    for (const auto& e : layers)
      if (std::find(ids.begin(), ids.end(), e.layer) != ids.end()) {
        b += e.base;
        p += e.pruned;
      }
    return divide(b, p);
  }

 private:
  static double divide(std::uint64_t a, std::uint64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  }
  std::uint64_t sum(bool pruned, std::optional<LayerKind> kind) const {
    std::uint64_t s = 0;
    for (const auto& e : layers)
      if (!kind || e.kind == *kind) s += pruned ? e.pruned : e.base;
    return s;
  }
};

template <class T>
std::uint64_t layer_flops(const Layer<T>& l) {
  if (l.spec.kind == LayerKind::conv)
    return 2ull * l.weight.rows() * l.weight.cols() * l.geom.out_area();
  if (l.spec.kind == LayerKind::fully_connected) return 2ull * l.weight.rows() * l.weight.cols();
  return 0;
}

/// FLOPs of a network against itself (pruned == base).
template <class T>
FlopsAccount count_gflops(const Network<T>& net) {
  FlopsAccount a;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& l = net.layer(i);
    if (!l.has_params()) continue;
    const auto f = layer_flops(l);
    a.layers.push_back({i, l.name, l.spec.kind, f, f});
  }
  return a;
}

/// FLOPs before and after applying a plan, computed from the kept index sets.
template <class T>
FlopsAccount count_gflops(const Network<T>& net, const CompactPlan& plan) {
  auto a = count_gflops(net);
  for (auto& e : a.layers) {
    const auto* p = plan.find(e.layer);
    if (!p) throw InvalidArgument("count_gflops: plan lacks layer " + e.name);
    const auto& l = net.layer(e.layer);
    const std::uint64_t area = l.spec.kind == LayerKind::conv ? l.geom.out_area() : 1;
    e.pruned = 2ull * p->keep_rows.size() * p->keep_cols.size() * area;
  }
  return a;
}

/// FLOPs of a network and its compacted counterpart, matched by layer index.
template <class T>
FlopsAccount count_gflops(const Network<T>& base, const Network<T>& compacted) {
  if (base.layers().size() != compacted.layers().size())
    throw InvalidArgument("count_gflops: networks have different depth");
  auto a = count_gflops(base);
  for (auto& e : a.layers) e.pruned = layer_flops(compacted.layer(e.layer));
  return a;
}

/// Copy of `net` with every pruned group's weights (and row biases) zeroed: the
/// reference the compacted network must reproduce.
template <class T>
Network<T> masked(Network<T> net, std::span<const LayerGroups> groups) {
  for (const auto& lg : groups)
    for (const auto& g : lg.groups)
      if (g.pruned) zero_group(net, g);
  return net;
}

}  // namespace increg
