#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "increg/compact.hpp"
#include "increg/error.hpp"
#include "increg/network.hpp"

namespace increg {

struct BenchConfig {
  std::size_t batch = 10;
  std::size_t repeats = 50;
  std::size_t warmup = 5;
  std::uint64_t seed = 1;
};

struct HardwareInfo {
  std::string cpu;
  unsigned hardware_threads = 0;
  std::size_t workers = 1;  // GEMM is single-threaded
  std::string compiler;
};

struct BenchLayer {
  std::size_t layer = 0;
  std::string name;
  std::uint64_t flops_base = 0;
  std::uint64_t flops_pruned = 0;
  double ms_base = 0.0;    // median over repeats
  double ms_pruned = 0.0;
  double ratio = 0.0;      // flops_base / flops_pruned
  double time_ratio = 0.0; // ms_base / ms_pruned

  friend bool operator==(const BenchLayer&, const BenchLayer&) = default;
};

struct BenchReport {
  BenchConfig config;
  HardwareInfo hardware;
  std::vector<BenchLayer> layers;
  double median_ms_base = 0.0;  // whole forward pass
  double mean_ms_base = 0.0;
  double median_ms_pruned = 0.0;
  double mean_ms_pruned = 0.0;
  double time_ratio = 0.0;
  double conv_ms_base = 0.0;    // sum of per-layer conv medians
  double conv_ms_pruned = 0.0;
  double conv_time_ratio = 0.0;
  double flops_ratio = 0.0;
  double conv_flops_ratio = 0.0;
};

inline HardwareInfo detect_hardware() {
  HardwareInfo h;
  h.hardware_threads = std::thread::hardware_concurrency();
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) h.cpu = line.substr(colon + 2);
      break;
    }
  }
  if (h.cpu.empty()) h.cpu = "unknown";
#if defined(__clang__)
  h.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  h.compiler = "gcc " __VERSION__;
#else
  h.compiler = "unknown";
#endif
  return h;
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double safe_ratio(double a, double b) { return b > 0.0 ? a / b : 0.0; }

}  // namespace detail

/// Times forward passes of `base` and `pruned` (same architecture up to compaction)
/// on one random batch. Runs alternate between the two networks so drift affects
/// both equally.
template <class T>
BenchReport bench(const Network<T>& base, const Network<T>& pruned, const BenchConfig& cfg) {
  if (cfg.repeats < 10) throw ConfigError("bench: repeats must be at least 10");
  if (cfg.batch == 0) throw ConfigError("bench: batch must be positive");
  if (!(base.input_shape() == pruned.input_shape()) ||
      base.layers().size() != pruned.layers().size())
    throw InvalidArgument("bench: networks do not share an input shape and depth");

  const auto in = base.input_shape();
  Tensor4<T> x({cfg.batch, in.c, in.h, in.w});
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : x.storage()) v = static_cast<T>(normal(rng));

  for (std::size_t i = 0; i < cfg.warmup; ++i) {
    (void)infer(base, x);
    (void)infer(pruned, x);
  }

  const std::size_t L = base.layers().size();
  std::vector<double> total_b, total_p;
  std::vector<std::vector<double>> per_b(L), per_p(L);
  std::vector<double> ms;
  auto timed = [&](const Network<T>& net, std::vector<double>& total,
                   std::vector<std::vector<double>>& per) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)infer(net, x, &ms);
    total.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    for (std::size_t l = 0; l < L; ++l) per[l].push_back(ms[l]);
  };
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    timed(base, total_b, per_b);
    timed(pruned, total_p, per_p);
  }

  BenchReport rep;
  rep.config = cfg;
  rep.hardware = detect_hardware();
  const auto flops = count_gflops(base, pruned);
  for (const auto& e : flops.layers) {
    BenchLayer bl;
    bl.layer = e.layer;
    bl.name = e.name;
    bl.flops_base = e.base;
    bl.flops_pruned = e.pruned;
    bl.ms_base = detail::median(per_b[e.layer]);
    bl.ms_pruned = detail::median(per_p[e.layer]);
    bl.ratio = e.ratio();
    bl.time_ratio = detail::safe_ratio(bl.ms_base, bl.ms_pruned);
    if (e.kind == LayerKind::conv) {
      rep.conv_ms_base += bl.ms_base;
      rep.conv_ms_pruned += bl.ms_pruned;
    }
    rep.layers.push_back(bl);
  }
  rep.median_ms_base = detail::median(total_b);
  rep.mean_ms_base = detail::mean(total_b);
  rep.median_ms_pruned = detail::median(total_p);
  rep.mean_ms_pruned = detail::mean(total_p);
  rep.time_ratio = detail::safe_ratio(rep.median_ms_base, rep.median_ms_pruned);
  rep.conv_time_ratio = detail::safe_ratio(rep.conv_ms_base, rep.conv_ms_pruned);
  rep.flops_ratio = flops.ratio();
  rep.conv_flops_ratio = flops.conv_ratio();
  return rep;
}

// JSON ----------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const BenchConfig& c) {
  j = {{"batch", c.batch}, {"repeats", c.repeats}, {"warmup", c.warmup}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, BenchConfig& c) {
  j.at("batch").get_to(c.batch);
  j.at("repeats").get_to(c.repeats);
  j.at("warmup").get_to(c.warmup);
  j.at("seed").get_to(c.seed);
}
inline void to_json(nlohmann::json& j, const HardwareInfo& h) {
  j = {{"cpu", h.cpu}, {"hardware_threads", h.hardware_threads}, {"workers", h.workers},
       {"compiler", h.compiler}};
}
inline void from_json(const nlohmann::json& j, HardwareInfo& h) {
  j.at("cpu").get_to(h.cpu);
  j.at("hardware_threads").get_to(h.hardware_threads);
  j.at("workers").get_to(h.workers);
  j.at("compiler").get_to(h.compiler);
}
inline void to_json(nlohmann::json& j, const BenchLayer& l) {
  j = {{"layer", l.name},           {"index", l.layer},         {"flops_base", l.flops_base},
       {"flops_pruned", l.flops_pruned}, {"ms_base", l.ms_base}, {"ms_pruned", l.ms_pruned},
       {"ratio", l.ratio},          {"time_ratio", l.time_ratio}};
}
inline void from_json(const nlohmann::json& j, BenchLayer& l) {
  j.at("layer").get_to(l.name);
  j.at("index").get_to(l.layer);
  j.at("flops_base").get_to(l.flops_base);
  j.at("flops_pruned").get_to(l.flops_pruned);
  j.at("ms_base").get_to(l.ms_base);
  j.at("ms_pruned").get_to(l.ms_pruned);
  j.at("ratio").get_to(l.ratio);
  j.at("time_ratio").get_to(l.time_ratio);
}
inline void to_json(nlohmann::json& j, const BenchReport& r) {
  j = {{"config", r.config},
       {"hardware", r.hardware},
       {"layers", r.layers},
       {"total",
        {{"median_ms_base", r.median_ms_base},
         {"mean_ms_base", r.mean_ms_base},
         {"median_ms_pruned", r.median_ms_pruned},
         {"mean_ms_pruned", r.mean_ms_pruned},
         {"time_ratio", r.time_ratio},
         {"conv_ms_base", r.conv_ms_base},
         {"conv_ms_pruned", r.conv_ms_pruned},
         {"conv_time_ratio", r.conv_time_ratio},
         {"flops_ratio", r.flops_ratio},
         {"conv_flops_ratio", r.conv_flops_ratio}}}};
}
inline void from_json(const nlohmann::json& j, BenchReport& r) {
  j.at("config").get_to(r.config);
  j.at("hardware").get_to(r.hardware);
  j.at("layers").get_to(r.layers);
  const auto& t = j.at("total");
  t.at("median_ms_base").get_to(r.median_ms_base);
  t.at("mean_ms_base").get_to(r.mean_ms_base);
  t.at("median_ms_pruned").get_to(r.median_ms_pruned);
  t.at("mean_ms_pruned").get_to(r.mean_ms_pruned);
  t.at("time_ratio").get_to(r.time_ratio);
  t.at("conv_ms_base").get_to(r.conv_ms_base);
  t.at("conv_ms_pruned").get_to(r.conv_ms_pruned);
  t.at("conv_time_ratio").get_to(r.conv_time_ratio);
  t.at("flops_ratio").get_to(r.flops_ratio);
  t.at("conv_flops_ratio").get_to(r.conv_flops_ratio);
}

/// Fixed-width table: one line per parameterized layer, then the totals.
inline std::string render_table(const BenchReport& r) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(8) << "layer" << std::right << std::setw(14) << "MFLOPs base"
     << std::setw(14) << "MFLOPs pruned" << std::setw(9) << "FLOPs x" << std::setw(11) << "ms base"
     << std::setw(11) << "ms pruned" << std::setw(9) << "time x" << '\n';
  auto mflops = [](std::uint64_t f) { return static_cast<double>(f) / 1e6; };
  for (const auto& l : r.layers) {
    os << std::left << std::setw(8) << l.name << std::right << std::setprecision(3) << std::setw(14)
       << mflops(l.flops_base) << std::setw(14) << mflops(l.flops_pruned) << std::setprecision(2)
       << std::setw(9) << l.ratio << std::setprecision(3) << std::setw(11) << l.ms_base
       << std::setw(11) << l.ms_pruned << std::setprecision(2) << std::setw(9) << l.time_ratio
       << '\n';
  }
  os << std::setprecision(3) << "conv total: " << r.conv_ms_base << " ms -> " << r.conv_ms_pruned
     << " ms (" << std::setprecision(2) << r.conv_time_ratio << "x time, " << r.conv_flops_ratio
     << "x FLOPs)\n";
  os << std::setprecision(3) << "forward pass: median " << r.median_ms_base << " ms -> "
     << r.median_ms_pruned << " ms, mean " << r.mean_ms_base << " ms -> " << r.mean_ms_pruned
     << " ms\n";
  os << "batch " << r.config.batch << ", " << r.config.repeats << " repeats, " << r.config.warmup
     << " warmup, " << r.hardware.workers << " worker(s) on " << r.hardware.cpu << '\n';
  return os.str();
}

}  // namespace increg
