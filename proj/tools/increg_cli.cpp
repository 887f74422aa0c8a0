// Command-line driver: train, prune, retrain, bench, verify-theorem, report,
// print-config.

#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "increg/increg.hpp"

namespace fs = std::filesystem;
using namespace increg;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_validation = 2;
constexpr int exit_nonconvergence = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string base;
  std::string pruned;
};

RunConfig effective_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  return c;
}

void check_input_shape(const Network<float>& net, const Dataset& d) {
  if (!(net.input_shape() == d.sample_shape()))
    throw ConfigError("architecture input does not match the dataset sample shape");
  if (net.num_classes() != d.classes)
    throw ConfigError("architecture has " + std::to_string(net.num_classes()) +
                      " outputs but the dataset has " + std::to_string(d.classes) + " classes");
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text_file(p, j.dump(2) + "\n"); }

int cmd_train(const Options& o) {
  const auto cfg = effective_config(o);
  validate_config(cfg);
  std::vector<float> means;
  const auto data = load_dataset(cfg, &means);
  auto net = Network<float>::build(config_architecture(cfg), cfg.seed);
  check_input_shape(net, data.train);
  const auto log = train(net, data.train, cfg.train, {}, &data.val);

  const fs::path out = cfg.out;
  Checkpoint ck{net, cfg.train.max_iters, means, {}, {{"stage", "train"}}};
  write_checkpoint(out / "model.ckpt", ck);
  std::ostringstream metrics;
  write_metrics_csv(metrics, log);
  write_text_file(out / "metrics.csv", metrics.str());
  const auto val = evaluate(net, data.val);
  const auto test = evaluate(net, data.test);
  std::cout << "trained " << cfg.train.max_iters << " iterations; val accuracy " << val.accuracy
            << ", test accuracy " << test.accuracy << "\nwrote " << (out / "model.ckpt").string()
            << " and " << (out / "metrics.csv").string() << '\n';
  return exit_ok;
}

int cmd_prune(const Options& o) {
  const auto cfg = effective_config(o);
  validate_config(cfg);
  const fs::path out = cfg.out;
  const fs::path src = o.checkpoint.empty() ? out / "model.ckpt" : fs::path(o.checkpoint);
  auto ck = read_checkpoint(src);
  if (!(ck.net.architecture() == config_architecture(cfg)))
    throw ConfigError("checkpoint architecture does not match the config");
  const auto data = load_dataset(cfg);
  check_input_shape(ck.net, data.train);
  const auto schedules = config_schedules(cfg, ck.net);
  if (schedules.empty()) throw ConfigError("no prunable conv layer in the architecture");

  PruneSummary summary;
  summary.accuracy_before = evaluate(ck.net, data.test).accuracy;
  try {
    auto result = run_pruning(ck.net, data.train, cfg.prune.train, schedules, cfg.retrain,
                              cfg.prune.log_every);
    summary.report = std::move(result.report);
    summary.flops = count_gflops(result.net, build_plan(result.net, result.groups));
    summary.accuracy_after = evaluate(result.net, data.test).accuracy;
    Checkpoint pruned{result.net, ck.iteration + summary.report.pruning_iters + cfg.retrain.max_iters,
                      ck.channel_means, result.groups, {{"stage", "prune"}}};
    write_checkpoint(out / "pruned.ckpt", pruned);
  } catch (const ConvergenceError& e) {
    summary.report = e.report;
    std::ostringstream csv;
    write_prune_csv(csv, summary.report);
    write_text_file(out / "prune_report.csv", csv.str());
    write_json(out / "prune_summary.json", summary_json(summary));
    std::cerr << "error: " << e.what() << "\npartial report written to "
              << (out / "prune_report.csv").string() << '\n';
    return exit_nonconvergence;
  }
  std::ostringstream csv;
  write_prune_csv(csv, summary.report);
  write_text_file(out / "prune_report.csv", csv.str());
  write_json(out / "prune_summary.json", summary_json(summary));
  std::cout << render_summary(summary) << "wrote " << (out / "pruned.ckpt").string() << ", "
            << (out / "prune_report.csv").string() << " and "
            << (out / "prune_summary.json").string() << '\n';
  return exit_ok;
}

int cmd_retrain(const Options& o) {
  const auto cfg = effective_config(o);
  validate_config(cfg);
  const fs::path out = cfg.out;
  const fs::path src = o.checkpoint.empty() ? out / "pruned.ckpt" : fs::path(o.checkpoint);
  auto ck = read_checkpoint(src);
  const auto data = load_dataset(cfg);
  check_input_shape(ck.net, data.train);
  const auto masks = frozen_masks(ck.groups);
  const auto log = train(ck.net, data.train, cfg.retrain, masks, &data.val);
  ck.iteration += cfg.retrain.max_iters;
  ck.extra["stage"] = "retrain";
  write_checkpoint(out / "retrained.ckpt", ck);
  std::ostringstream metrics;
  write_metrics_csv(metrics, log);
  write_text_file(out / "metrics_retrain.csv", metrics.str());
  std::cout << "retrained " << cfg.retrain.max_iters << " iterations; test accuracy "
            << evaluate(ck.net, data.test).accuracy << "\nwrote "
            << (out / "retrained.ckpt").string() << '\n';
  return exit_ok;
}

int cmd_bench(const Options& o) {
  const auto cfg = effective_config(o);
  const fs::path out = cfg.out;
  const auto base = read_checkpoint(o.base.empty() ? out / "model.ckpt" : fs::path(o.base));
  const auto pruned = read_checkpoint(o.pruned.empty() ? out / "pruned.ckpt" : fs::path(o.pruned));
  const auto plan = build_plan(pruned.net, pruned.groups);
  const auto compacted = compact(pruned.net, plan);
  if (!(base.net.architecture() == pruned.net.architecture()))
    throw ConfigError("base and pruned checkpoints have different architectures");
  const auto report =
      bench(base.net, compacted, BenchConfig{cfg.bench_batch, cfg.bench_repeats, cfg.bench_warmup, cfg.seed});
  nlohmann::json j = report;
  write_json(out / "bench.json", j);
  std::cout << render_table(report) << "wrote " << (out / "bench.json").string() << '\n';
  return exit_ok;
}

int cmd_verify_theorem(const Options& o) {
  const auto cfg = effective_config(o);
  validate_config(cfg);
  const auto suite = shrinkage_suite(objective_library(), cfg.theorem_lambdas, cfg.theorem_deltas);
  std::ostringstream csv;
  write_suite_csv(csv, suite);
  const fs::path out = cfg.out;
  write_text_file(out / "theorem.csv", csv.str());
  std::cout << "objective   start    lambda0     omega0       lambda1     omega1       result\n";
  for (const auto& r : suite.rows) {
    std::cout << std::left << std::setw(12) << r.objective << std::right << std::setw(5) << r.start
              << std::setw(11) << r.lambda0 << std::setw(13) << r.omega0 << std::setw(12)
              << r.lambda1 << std::setw(13) << r.omega1 << "  "
              << (r.basin_jump ? "basin jump" : (r.shrank ? "pass" : "FAIL")) << '\n';
  }
  std::cout << suite.rows.size() << " continuations, " << suite.failures() << " failed, "
            << suite.basin_jumps() << " basin jumps flagged, " << suite.skipped
            << " skipped (omega0 = 0)\nwrote " << (out / "theorem.csv").string() << '\n';
  return suite.all_passed() ? exit_ok : exit_failure;
}

int cmd_report(const Options& o) {
  const auto cfg = effective_config(o);
  const fs::path out = cfg.out;
  std::ifstream csv(out / "prune_report.csv");
  if (!csv) throw InvalidArgument("cannot open '" + (out / "prune_report.csv").string() + "'");
  const auto rows = read_prune_csv(csv, (out / "prune_report.csv").string());
  std::map<std::size_t, std::size_t> groups;
  for (const auto& r : rows) groups[r.layer] = std::max(groups[r.layer], r.group_id + 1);
  for (const auto& [layer, n] : groups) {
    const auto script = out / ("trajectory_layer" + std::to_string(layer) + ".gp");
    write_text_file(script, trajectory_gnuplot((out / "prune_report.csv").string(), layer, n,
                                               (out / ("trajectory_layer" + std::to_string(layer) + ".png")).string()));
    std::cout << "wrote " << script.string() << " (" << n << " groups)\n";
  }
  std::ifstream js(out / "prune_summary.json");
  if (js) {
    const auto j = nlohmann::json::parse(js);
    for (const auto& l : j.at("layers"))
      std::cout << l.at("layer").get<std::string>() << ": " << l.at("pruned").get<std::size_t>()
                << "/" << l.at("groups").get<std::size_t>() << " groups pruned (target "
                << l.at("target").get<std::size_t>() << ")\n";
    std::cout << "GFLOPs ratio " << j.at("gflops_ratio").get<double>() << ", accuracy "
              << j.at("accuracy_before").get<double>() << " -> "
              << j.at("accuracy_after").get<double>() << '\n';
  }
  return exit_ok;
}

int cmd_print_config(const Options& o) {
  std::cout << print_config(effective_config(o));
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental-regularization structured pruning"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override run.seed");
    sub->add_option("--out", o.out, "override run.out (output directory)");
  };
  auto* train_cmd = app.add_subcommand("train", "train a baseline network");
  auto* prune_cmd = app.add_subcommand("prune", "incremental-regularization pruning and retraining");
  prune_cmd->add_option("--checkpoint", o.checkpoint, "input checkpoint (default OUT/model.ckpt)");
  auto* retrain_cmd = app.add_subcommand("retrain", "retrain a pruned checkpoint with frozen masks");
  retrain_cmd->add_option("--checkpoint", o.checkpoint, "input checkpoint (default OUT/pruned.ckpt)");
  auto* bench_cmd = app.add_subcommand("bench", "GFLOPs and wall-time of dense vs compacted network");
  bench_cmd->add_option("--base", o.base, "dense checkpoint (default OUT/model.ckpt)");
  bench_cmd->add_option("--pruned", o.pruned, "pruned checkpoint (default OUT/pruned.ckpt)");
  auto* theorem_cmd = app.add_subcommand("verify-theorem", "numerical check of the shrinkage theorem");
  auto* report_cmd = app.add_subcommand("report", "plot scripts and summary from a pruning run");
  auto* print_cmd = app.add_subcommand("print-config", "print every setting with its effective value");
  for (auto* s : {train_cmd, prune_cmd, retrain_cmd, bench_cmd, theorem_cmd, report_cmd, print_cmd})
    common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_validation;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*prune_cmd) return cmd_prune(o);
    if (*retrain_cmd) return cmd_retrain(o);
    if (*bench_cmd) return cmd_bench(o);
    if (*theorem_cmd) return cmd_verify_theorem(o);
    if (*report_cmd) return cmd_report(o);
    if (*print_cmd) return cmd_print_config(o);
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_nonconvergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_validation;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return exit_validation;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return exit_validation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_failure;
  }
  return exit_failure;
}
