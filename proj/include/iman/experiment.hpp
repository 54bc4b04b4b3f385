#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iman/dataset.hpp"
#include "iman/model.hpp"
#include "iman/rng.hpp"

namespace iman {

// ---- metrics ----

struct EvalReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::optional<double> auc;  // empty on a single-class split
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Mann-Whitney statistic via average ranks; ties count one half. Exactly
// equal to pairwise enumeration and O(n log n).
double auc_score(std::span<const double> scores, std::span<const int> labels);

// Confusion metrics at a threshold (prediction = score > threshold).
// Precision and recall fall back to 0 when their denominator is empty;
// F1 is 0 when precision + recall is 0. AUC is left empty for single-class
// inputs instead of failing.
EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                           double threshold = 0.5);

// Scores every sample of a split with sigmoid(logit) and reduces to an
// EvalReport.
EvalReport evaluate(const ImanModel& model, const Dataset& dataset, Split split,
                    double threshold = 0.5);

// ---- synthetic cohort ----

struct SyntheticSpec {
  std::size_t n_samples = 600;
  Shape image_shape = {1, 32, 32};
  std::size_t ebv_dim = 4;
  std::size_t normal_dim = 19;
  double signal_strength = 2.0;
  double noise_scale = 1.0;
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;
  std::uint64_t seed = 1;

  void validate() const;
};

// Planted-signal cohort: a latent normal z fixes the label (z > 0) and
// colors every modality; fields get signal * z along a fixed unit
// direction plus noise, images get a Gaussian blob with peak signal * z
// plus pixel noise. Deterministic per seed, class-balanced within 5
// percentage points for n >= 200.
Dataset gen_synthetic(const SyntheticSpec& spec);

// ---- training ----

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 12;
  double warmup_fraction = 0.10;
  std::uint64_t seed = 1;

  void validate() const;
};

// Piecewise-linear schedule: 0 at step 0, base_lr exactly at the end of
// warmup, 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double warmup_fraction, double base_lr);

// Adam with decoupled weight decay; parameters updated in registration
// order so runs are bit-reproducible.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  // grad_scale multiplies accumulated gradients (1/batch for mean loss).
  void step(double lr, double grad_scale);

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_auc;
};

struct TrainResult {
  std::vector<EpochStats> history;
};

// Per-epoch seeded shuffling, per-sample backward with fixed-order gradient
// accumulation, warmup + linear-decay schedule. Throws TrainError with the
// step index if the loss or a parameter goes non-finite.
TrainResult train(ImanModel& model, const Dataset& dataset, const TrainConfig& config);

void save_history_csv(const std::string& path, const TrainResult& result);

// ---- missingness sweep ----

struct SweepScenario {
  std::string name;
  std::array<double, kNumModalities> rates{};
};

struct SweepCell {
  std::string scenario;
  std::uint64_t seed = 0;
  EvalReport report;
  double train_minutes = 0.0;
};

// For each (scenario, seed): build a table, mask every split consistently,
// train a fresh model, evaluate on test. Cells are independent; `jobs`
// worker threads may run them concurrently, results keep scenario-major
// order regardless of scheduling.
std::vector<SweepCell> sweep_missing(const Dataset& base, const std::vector<SweepScenario>& scenarios,
                                     std::span<const std::uint64_t> seeds, const ModelConfig& mc,
                                     const TrainConfig& tc, std::size_t jobs = 1);

Dataset mask_dataset(const Dataset& base, const MissingnessTable& table);

void save_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells);

}  // namespace iman
