#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"
#include "increg/sgd.hpp"

namespace increg {

/// Labelled images, stored as float regardless of the training precision.
struct Dataset {
  Tensor4<float> images;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape3 sample_shape() const { return {images.shape().c, images.shape().h, images.shape().w}; }
};

/// Epoch-wise shuffled mini-batch indices. The order depends only on the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(std::min(batch, n)), rng_(seed ^ 0x5DEECE66DULL) {
    detail::require(n > 0, "BatchSampler: empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::span<const std::size_t> next() {
    if (pos_ + batch_ > order_.size()) {
      reshuffle();
      ++epoch_;
    }
    auto out = std::span<const std::size_t>(order_).subspan(pos_, batch_);
    pos_ += batch_;
    return out;
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const { return order_.size() / batch_; }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  std::mt19937_64 rng_;
};

template <class T>
Tensor4<T> gather_images(const Dataset& data, std::span<const std::size_t> idx) {
  const auto s = data.images.shape();
  Tensor4<T> out({idx.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = data.images.sample(idx[i]);
    std::transform(src.begin(), src.end(), out.sample(i).begin(),
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

inline std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.labels[idx[i]];
  return out;
}

inline std::uint64_t sampler_seed(std::uint64_t net_seed) { return net_seed * 2654435761ULL + 17; }

/// Forward, backward and one SGD update on a mini-batch. Returns the data loss.
template <class T>
double train_step(Network<T>& net, const Tensor4<T>& batch, std::span<const int> labels,
                  const TrainConfig& cfg, std::size_t iter,
                  std::span<const LayerGroups> groups = {}) {
  auto fwd = forward(net, batch);
  const auto grads = backward(net, fwd.cache, labels);
  sgd_step(net, grads, cfg, cfg.lr_at(iter), groups);
  return grads.loss;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

template <class T>
EvalResult evaluate(const Network<T>& net, const Dataset& data, std::size_t batch = 256) {
  EvalResult r;
  if (data.size() == 0) return r;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = infer(net, gather_images<T>(data, idx));
    const auto labels = gather_labels(data, idx);
    loss_sum += softmax_xent<T>(logits, labels, nullptr) * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto row = logits.row(b);
      const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += pred == labels[b] ? 1 : 0;
    }
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

struct EpochRecord {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean mini-batch loss since the previous record
  double val_accuracy = -1.0;
  double val_loss = -1.0;
};

/// Plain training with weight decay and optional frozen group masks. `on_epoch` is
/// called after every completed epoch and after the final iteration.
template <class T>
std::vector<EpochRecord> train(Network<T>& net, const Dataset& data, const TrainConfig& cfg,
                               std::span<const LayerGroups> groups = {},
                               const Dataset* val = nullptr) {
  cfg.validate();
  std::vector<EpochRecord> log;
  if (cfg.max_iters == 0) return log;
  BatchSampler sampler(data.size(), cfg.batch_size, sampler_seed(net.seed()));
  double loss_sum = 0.0;
  std::size_t loss_n = 0;
  auto emit = [&](std::size_t iter) {
    EpochRecord r{iter, sampler.epoch(), loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0};
    if (val && val->size() > 0) {
      const auto e = evaluate(net, *val);
      r.val_accuracy = e.accuracy;
      r.val_loss = e.loss;
    }
    log.push_back(r);
    loss_sum = 0.0;
    loss_n = 0;
  };
  const std::size_t per_epoch = sampler.batches_per_epoch();
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const auto idx = sampler.next();
    loss_sum += train_step(net, gather_images<T>(data, idx), gather_labels(data, idx), cfg, it, groups);
    ++loss_n;
    if ((it + 1) % per_epoch == 0 || it + 1 == cfg.max_iters) emit(it + 1);
  }
  return log;
}

}  // namespace increg
