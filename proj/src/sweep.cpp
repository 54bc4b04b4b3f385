#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <thread>

#include "iman/experiment.hpp"
#include "iman/missingness.hpp"

namespace iman {

Dataset mask_dataset(const Dataset& base, const MissingnessTable& table) {
  if (table.rows != base.samples.size())
    throw ParamError("missingness table has " + std::to_string(table.rows) + " rows for " +
                     std::to_string(base.samples.size()) + " samples");
  Dataset masked = base;
  for (std::size_t i = 0; i < masked.samples.size(); ++i)
    masked.samples[i] = apply_missing(base.samples[i], table.row(i));
  return masked;
}

namespace {

SweepCell run_cell(const Dataset& base, const SweepScenario& scenario, std::uint64_t seed,
                   const ModelConfig& mc, const TrainConfig& tc) {
  const auto start = std::chrono::steady_clock::now();
  Rng cell_rng(seed);

  const MissingnessTable table =
      build_table(base.samples.size(), scenario.rates, cell_rng.split("mask"));
  const Dataset masked = mask_dataset(base, table);

  ImanModel model = ImanModel::init(mc, cell_rng.split("init"));
  TrainConfig cell_tc = tc;
  cell_tc.seed = seed;
  train(model, masked, cell_tc);

  SweepCell cell;
  cell.scenario = scenario.name;
  cell.seed = seed;
  cell.report = evaluate(model, masked, Split::Test);
  cell.train_minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  return cell;
}

}  // namespace

std::vector<SweepCell> sweep_missing(const Dataset& base, const std::vector<SweepScenario>& scenarios,
                                     std::span<const std::uint64_t> seeds, const ModelConfig& mc,
                                     const TrainConfig& tc, std::size_t jobs) {
  if (scenarios.empty() || seeds.empty()) throw ParamError("sweep needs scenarios and seeds");
  struct Task {
    std::size_t scenario_index;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    for (std::uint64_t seed : seeds) tasks.push_back({s, seed});

  std::vector<SweepCell> cells(tasks.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, tasks.size()));

  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      cells[i] = run_cell(base, scenarios[tasks[i].scenario_index], tasks[i].seed, mc, tc);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return cells;  // task order is scenario-major by construction
}

namespace {

std::string fmt_metric(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void save_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "scenario,seed,accuracy,f1,recall,precision,auc,train_minutes\n";
  char minutes[32];
  for (const auto& cell : cells) {
    std::snprintf(minutes, sizeof(minutes), "%.2f", cell.train_minutes);
    out << cell.scenario << "," << cell.seed << "," << fmt_metric(cell.report.accuracy) << ","
        << fmt_metric(cell.report.f1) << "," << fmt_metric(cell.report.recall) << ","
        << fmt_metric(cell.report.precision) << ","
        << (cell.report.auc ? fmt_metric(*cell.report.auc) : "undefined") << "," << minutes
        << "\n";
  }
}

}  // namespace iman
