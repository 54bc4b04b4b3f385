#include "iman/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "iman/config.hpp"
#include "iman/experiment.hpp"
#include "iman/missingness.hpp"
#include "iman/verification.hpp"

namespace iman {

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string model_path;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  double tol = 1e-4;
  bool tol_given = false;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg =
      args.config_path.empty() ? RunConfig::defaults() : RunConfig::from_file(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.tol_given) cfg.gradcheck_tol = args.tol;
  cfg.model.validate();
  return cfg;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + name + "', expected train|val|test");
}

int cmd_synth(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  Dataset ds = gen_synthetic(cfg.synthetic_spec());

  bool any_missing = false;
  for (double r : cfg.data_missing_rates) any_missing = any_missing || r > 0.0;
  if (any_missing) {
    const MissingnessTable table =
        build_table(ds.samples.size(), cfg.data_missing_rates, Rng(cfg.seed).split("mask"));
    ds = mask_dataset(ds, table);
  }
  save_dataset(args.out_dir, ds);
  cfg.write_resolved(args.out_dir);
  std::printf("wrote %zu samples (%zu train / %zu val / %zu test) to %s\n", ds.samples.size(),
              ds.train_idx.size(), ds.val_idx.size(), ds.test_idx.size(), args.out_dir.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  const Dataset ds = load_dataset(args.data_dir);
  ImanModel model = ImanModel::init(cfg.model, Rng(cfg.seed).split("init"));
  const TrainResult result = train(model, ds, cfg.train_config());

  std::filesystem::create_directories(args.out_dir);
  save_checkpoint(args.out_dir + "/model.ckpt", model);
  save_history_csv(args.out_dir + "/history.csv", result);
  cfg.write_resolved(args.out_dir);

  const auto& last = result.history.back();
  std::printf("trained %zu epochs; final train loss %.6f, val auc %s\n", result.history.size(),
              last.train_loss,
              last.val_auc ? format_double(*last.val_auc).c_str() : "undefined");
  std::printf("checkpoint: %s/model.ckpt (%zu parameters)\n", args.out_dir.c_str(),
              model.parameter_count());
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const ImanModel model = load_checkpoint(args.model_path);
  const Dataset ds = load_dataset(args.data_dir);
  const Split split = parse_split(args.split);
  const EvalReport report = evaluate(model, ds, split);

  std::printf("%-10s %s\n", "metric", "value");
  std::printf("%-10s %.6f\n", "accuracy", report.accuracy);
  std::printf("%-10s %.6f\n", "f1", report.f1);
  std::printf("%-10s %.6f\n", "recall", report.recall);
  std::printf("%-10s %.6f\n", "precision", report.precision);
  if (report.auc)
    std::printf("%-10s %.6f\n", "auc", *report.auc);
  else
    std::printf("%-10s %s\n", "auc", "undefined");
  std::printf("counts     tp=%zu fp=%zu tn=%zu fn=%zu\n", report.tp, report.fp, report.tn,
              report.fn);

  if (!args.out_dir.empty()) {
    std::filesystem::create_directories(args.out_dir);
    std::ofstream csv(args.out_dir + "/eval.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + args.out_dir + "/eval.csv");
    csv << "split,accuracy,f1,recall,precision,auc,tp,fp,tn,fn\n";
    csv << args.split << "," << format_double(report.accuracy) << "," << format_double(report.f1)
        << "," << format_double(report.recall) << "," << format_double(report.precision) << ","
        << (report.auc ? format_double(*report.auc) : "undefined") << "," << report.tp << ","
        << report.fp << "," << report.tn << "," << report.fn << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  if (cfg.scenarios.empty())
    throw ConfigError("sweep needs at least one sweep.scenario.<name> entry in the config");
  const Dataset ds = load_dataset(args.data_dir);
  const auto cells =
      sweep_missing(ds, cfg.scenarios, cfg.sweep_seeds, cfg.model, cfg.train_config(), args.jobs);

  std::filesystem::create_directories(args.out_dir);
  save_sweep_csv(args.out_dir + "/sweep.csv", cells);
  cfg.write_resolved(args.out_dir);

  // Seed-averaged AUC per scenario, in scenario order, with the
  // degradation check between consecutive scenarios.
  std::printf("%-16s %-10s %s\n", "scenario", "mean_auc", "mean_accuracy");
  double previous = -1.0;
  bool monotone = true;
  for (const auto& scenario : cfg.scenarios) {
    double auc_sum = 0.0, acc_sum = 0.0;
    std::size_t count = 0;
    for (const auto& cell : cells) {
      if (cell.scenario != scenario.name) continue;
      auc_sum += cell.report.auc.value_or(0.5);
      acc_sum += cell.report.accuracy;
      ++count;
    }
    const double mean_auc = auc_sum / static_cast<double>(count);
    std::printf("%-16s %-10.4f %.4f\n", scenario.name.c_str(), mean_auc,
                acc_sum / static_cast<double>(count));
    if (previous >= 0.0 && mean_auc > previous) monotone = false;
    previous = mean_auc;
  }
  std::printf("degradation monotone in scenario order: %s\n", monotone ? "yes" : "no");
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  const RunConfig cfg = load_config(args);
  GradSuiteOptions opts;
  opts.tol = cfg.gradcheck_tol;
  opts.seed = cfg.seed;
  opts.model_cfg = cfg.model;
  // Coordinate budgets keep the desk-scale suite under the two-minute mark;
  // every coordinate of the small layers, random subsets of the large ones.
  opts.max_coords_dcmc = 600;
  opts.max_coords_attention = 400;
  opts.max_coords_cafa = 800;
  opts.max_coords_model = 250;

  const auto entries = run_gradient_suite(opts);
  bool all_passed = true;
  std::printf("%-16s %-6s %-12s %-10s %s\n", "layer", "pass", "max_rel_err", "coords", "seconds");
  for (const auto& e : entries) {
    all_passed = all_passed && e.passed;
    std::printf("%-16s %-6s %-12.3e %-10zu %.1f\n", e.name.c_str(), e.passed ? "ok" : "FAIL",
                e.report.max_relative_error, e.report.coords_checked, e.seconds);
  }
  std::printf("gradient suite: %s (tol %g, %zu points per layer)\n",
              all_passed ? "PASS" : "FAIL", opts.tol, opts.points);
  return all_passed ? 0 : 2;
}

int cmd_selftest(const CommonArgs& args) {
  const std::uint64_t seed = args.seed.value_or(1);
  const auto entries = run_selftest(seed);
  bool all_passed = true;
  for (const auto& e : entries) {
    all_passed = all_passed && e.passed;
    std::printf("[%s] %s (%s)\n", e.passed ? "ok" : "FAIL", e.name.c_str(), e.detail.c_str());
  }
  std::printf("selftest: %s\n", all_passed ? "PASS" : "FAIL");
  return all_passed ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"IMAN: multi-modal classification under missing modalities"};
  app.require_subcommand(1);
  CommonArgs args;

  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "Config file (flat key = value)")
        ->check(CLI::ExistingFile);
  };
  const auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", args.seed, "Root seed; overrides the config value");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic cohort directory");
  add_config(synth);
  add_seed(synth);
  synth->add_option("--out", args.out_dir, "Output dataset directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  add_config(train_cmd);
  add_seed(train_cmd);
  train_cmd->add_option("--data", args.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", args.out_dir, "Output directory (checkpoint + history)")
      ->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--model", args.model_path, "Checkpoint path")->required();
  eval_cmd->add_option("--data", args.data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--split", args.split, "train|val|test (default test)");
  eval_cmd->add_option("--out", args.out_dir, "Optional directory for eval.csv");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run the missingness-rate sweep");
  add_config(sweep_cmd);
  add_seed(sweep_cmd);
  sweep_cmd->add_option("--data", args.data_dir, "Dataset directory")->required();
  sweep_cmd->add_option("--out", args.out_dir, "Output directory (sweep.csv)")->required();
  sweep_cmd->add_option("--jobs", args.jobs, "Worker threads over sweep cells (default 1)");

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Run the gradient certification suite");
  add_config(grad_cmd);
  add_seed(grad_cmd);
  grad_cmd->add_option("--tol", args.tol, "Max relative error tolerance (default 1e-4)");

  CLI::App* self_cmd = app.add_subcommand("selftest", "Run the oracle-equivalence properties");
  add_seed(self_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  args.tol_given = grad_cmd->count("--tol") > 0;

  try {
    if (synth->parsed()) return cmd_synth(args);
    if (train_cmd->parsed()) return cmd_train(args);
    if (eval_cmd->parsed()) return cmd_eval(args);
    if (sweep_cmd->parsed()) return cmd_sweep(args);
    if (grad_cmd->parsed()) return cmd_gradcheck(args);
    if (self_cmd->parsed()) return cmd_selftest(args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ParamError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ConstraintError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace iman
