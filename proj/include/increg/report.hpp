#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "increg/compact.hpp"
#include "increg/error.hpp"
#include "increg/pruner.hpp"
#include "increg/training.hpp"

namespace increg {

inline constexpr const char* prune_csv_header =
    "step,layer,group_id,l1,lambda_g,inst_rank,avg_rank,pruned";

/// One row per group per λ-update step.
inline void write_prune_csv(std::ostream& os, const PruneReport& r) {
  os << prune_csv_header << '\n';
  os << std::setprecision(9);
  for (const auto& row : r.rows)
    os << row.step << ',' << row.layer << ',' << row.group_id << ',' << row.l1 << ','
       << row.lambda << ',' << row.inst_rank << ',' << row.avg_rank << ',' << (row.pruned ? 1 : 0)
       << '\n';
}

/// Reads the CSV written by write_prune_csv; rejects rows out of (step, layer,
/// group_id) order.
inline std::vector<PruneReport::Row> read_prune_csv(std::istream& is, const std::string& origin) {
  std::string line;
  if (!std::getline(is, line) || line != prune_csv_header)
    throw ParseError(origin + ": missing or unexpected CSV header");
  std::vector<PruneReport::Row> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    PruneReport::Row r;
    char c1, c2, c3, c4, c5, c6, c7;
    int pruned = 0;
    if (!(ss >> r.step >> c1 >> r.layer >> c2 >> r.group_id >> c3 >> r.l1 >> c4 >> r.lambda >> c5 >>
          r.inst_rank >> c6 >> r.avg_rank >> c7 >> pruned))
      throw ParseError(origin + ": malformed row at line " + std::to_string(lineno));
    r.pruned = pruned != 0;
    if (!rows.empty()) {
      const auto& p = rows.back();
      const bool increasing =
          std::tie(p.step, p.layer, p.group_id) < std::tie(r.step, r.layer, r.group_id);
      if (!increasing)
        throw ParseError(origin + ": rows out of order at line " + std::to_string(lineno));
    }
    rows.push_back(r);
  }
  return rows;
}

struct PruneSummary {
  PruneReport report;
  FlopsAccount flops;
  double accuracy_before = -1.0;
  double accuracy_after = -1.0;
};

inline nlohmann::json summary_json(const PruneSummary& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.report.layers) {
    nlohmann::json j = {{"layer", l.name},       {"index", l.layer},   {"kind", to_string(l.kind)},
                        {"groups", l.groups},    {"target", l.target}, {"pruned", l.pruned},
                        {"converged_iter", l.converged_iter}};
    for (const auto& f : s.flops.layers)
      if (f.layer == l.layer) {
        j["gflops_base"] = static_cast<double>(f.base) / 1e9;
        j["gflops_pruned"] = static_cast<double>(f.pruned) / 1e9;
      }
    layers.push_back(std::move(j));
  }
  return {{"converged", s.report.converged},
          {"pruning_iters", s.report.pruning_iters},
          {"retrain_iters", s.report.retrain_iters},
          {"layers", std::move(layers)},
          {"gflops_base", static_cast<double>(s.flops.total_base()) / 1e9},
          {"gflops_pruned", static_cast<double>(s.flops.total_pruned()) / 1e9},
          {"gflops_ratio", s.flops.ratio()},
          {"conv_gflops_ratio", s.flops.conv_ratio()},
          {"accuracy_before", s.accuracy_before},
          {"accuracy_after", s.accuracy_after}};
}

/// Per-epoch metrics log.
inline void write_metrics_csv(std::ostream& os, const std::vector<EpochRecord>& log) {
  os << "iter,epoch,train_loss,val_accuracy,val_loss\n" << std::setprecision(9);
  for (const auto& r : log)
    os << r.iter << ',' << r.epoch << ',' << r.train_loss << ',' << r.val_accuracy << ','
       << r.val_loss << '\n';
}

/// gnuplot script drawing the L1-norm of every group of one layer over the update
/// steps, one line per group, from the CSV written by write_prune_csv.
inline std::string trajectory_gnuplot(const std::string& csv, std::size_t layer,
                                      std::size_t groups, const std::string& png) {
  std::ostringstream os;
  os << "set datafile separator ','\n"
     << "set terminal pngcairo size 900,600\n"
     << "set output '" << png << "'\n"
     << "set xlabel 'iteration'\nset ylabel 'L1-norm'\nset key off\n"
     << "plot for [g=0:" << (groups ? groups - 1 : 0) << "] '" << csv
     << "' every ::1 using ($2==" << layer << " && $3==g ? $1 : 1/0):4 with lines\n";
  return os.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw InvalidArgument("cannot write '" + p.string() + "'");
  out << text;
}

/// Table of per-layer outcomes for the terminal.
inline std::string render_summary(const PruneSummary& s) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "layer" << std::setw(9) << "kind" << std::right
     << std::setw(8) << "groups" << std::setw(8) << "target" << std::setw(8) << "pruned"
     << std::setw(12) << "converged" << '\n';
  for (const auto& l : s.report.layers)
    os << std::left << std::setw(8) << l.name << std::setw(9) << to_string(l.kind) << std::right
       << std::setw(8) << l.groups << std::setw(8) << l.target << std::setw(8) << l.pruned
       << std::setw(12) << l.converged_iter << '\n';
  os << std::fixed << std::setprecision(4) << "MFLOPs per sample "
     << static_cast<double>(s.flops.total_base()) / 1e6 << " -> "
     << static_cast<double>(s.flops.total_pruned()) / 1e6 << " (" << std::setprecision(2)
     << s.flops.ratio() << "x)\n";
  if (s.accuracy_after >= 0.0)
    os << std::setprecision(4) << "accuracy " << s.accuracy_before << " -> " << s.accuracy_after << '\n';
  return os.str();
}

}  // namespace increg
