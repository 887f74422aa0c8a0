#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"

namespace increg {

enum class LrPolicy { fixed, step };

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.004;  // λ, applied to every weight and bias
  std::size_t batch_size = 32;
  std::size_t max_iters = 1000;
  LrPolicy lr_policy = LrPolicy::fixed;
  double lr_factor = 0.1;     // step policy: multiplier
  std::size_t lr_every = 0;   // step policy: period in iterations

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("TrainConfig: base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("TrainConfig: momentum outside [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("TrainConfig: weight_decay must be nonnegative");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be at least 1");
    if (lr_policy == LrPolicy::step && (lr_every == 0 || !(lr_factor > 0.0)))
      throw ConfigError("TrainConfig: step policy needs lr_every > 0 and lr_factor > 0");
  }

  double lr_at(std::size_t iter) const {
    if (lr_policy == LrPolicy::fixed) return base_lr;
    return base_lr * std::pow(lr_factor, static_cast<double>(iter / lr_every));
  }
};

/// One momentum-SGD update of the regularized objective
///   L(W) + λ/2 ||W||² + Σ_g λ_g/2 ||W_g||².
/// A grouped weight sees the gradient ∂L/∂w + (λ + λ_g) w, every other weight and
/// every bias ∂L/∂w + λ w. Pruned groups end the step with weight and momentum
/// exactly zero (and their filter bias, for row groups).
template <class T>
void sgd_step(Network<T>& net, const Gradients<T>& grads, const TrainConfig& cfg, double lr,
              std::span<const LayerGroups> groups = {}) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || grads.bias.size() != layers.size())
    throw InvalidArgument("sgd_step: gradient list does not match network");
  for (const auto& lg : groups) {
    if (lg.layer_id >= layers.size() || !layers[lg.layer_id].has_params())
      throw InvalidArgument("sgd_step: group refers to a parameter-free layer");
    for (const auto& g : lg.groups)
      if (!(g.lambda >= 0.0))
        throw ContractViolation("sgd_step: negative regularization factor on group " +
                                std::to_string(g.group_id) + " of layer " +
                                std::to_string(lg.layer_id));
  }
  const T mu = static_cast<T>(cfg.momentum);
  const T rate = static_cast<T>(lr);
  const T decay = static_cast<T>(cfg.weight_decay);
  std::vector<T> coef;
  std::vector<char> masked;
  std::vector<char> bias_masked;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& layer = layers[i];
    if (!layer.has_params()) continue;
    const auto& gw = grads.weight[i];
    const auto& gb = grads.bias[i];
    if (gw.rows() != layer.weight.rows() || gw.cols() != layer.weight.cols() ||
        gb.size() != layer.bias.size())
      throw InvalidArgument("sgd_step: gradient shape differs for " + layer.name);

    coef.assign(layer.weight.size(), decay);
    masked.assign(layer.weight.size(), 0);
    bias_masked.assign(layer.bias.size(), 0);
    for (const auto& lg : groups) {
      if (lg.layer_id != i) continue;
      for (const auto& g : lg.groups) {
        const T c = static_cast<T>(cfg.weight_decay + g.lambda);
        for (auto m : g.members) {
          coef[m] = c;
          if (g.pruned) masked[m] = 1;
        }
        if (g.pruned)
          for (auto f : g.bias_members) bias_masked[f] = 1;
      }
    }

    auto w = layer.weight.data();
    auto v = layer.weight_momentum.data();
    auto g = gw.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (masked[k]) {
        w[k] = T{};
        v[k] = T{};
        continue;
      }
      v[k] = mu * v[k] + rate * (g[k] + coef[k] * w[k]);
      w[k] -= v[k];
    }
    for (std::size_t k = 0; k < layer.bias.size(); ++k) {
      if (bias_masked[k]) {
        layer.bias[k] = T{};
        layer.bias_momentum[k] = T{};
        continue;
      }
      layer.bias_momentum[k] = mu * layer.bias_momentum[k] + rate * (gb[k] + decay * layer.bias[k]);
      layer.bias[k] -= layer.bias_momentum[k];
    }
  }
  net.bump_version();
}

}  // namespace increg
