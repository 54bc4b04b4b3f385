#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iman/experiment.hpp"
#include "iman/model.hpp"

namespace iman {

// Flat dotted-key configuration: one `section.key = value` pair per line,
// `#` comments. Every field has a default; unknown keys are rejected. The
// resolved form round-trips (parse(render(c)) == c), with scenarios kept in
// name order.
struct RunConfig {
  std::uint64_t seed = 1;
  double gradcheck_tol = 1e-4;
  ModelConfig model;
  TrainConfig train;
  // data section; image and field shapes come from the model section so the
  // cohort and the model cannot drift apart.
  std::size_t n_samples = 600;
  double signal_strength = 2.0;
  double noise_scale = 1.0;
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;
  // Optional masking applied at synthesis time, one rate per modality.
  std::array<double, kNumModalities> data_missing_rates{};
  // sweep section
  std::vector<std::uint64_t> sweep_seeds = {1, 2, 3};
  std::vector<SweepScenario> scenarios;  // sorted by name

  static RunConfig defaults() { return {}; }
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> kv() const;  // key-sorted

  SyntheticSpec synthetic_spec() const;  // data seed derived from the root
  TrainConfig train_config() const;      // shuffle seed derived from the root

  void write_resolved(const std::string& dir) const;
};

std::string format_double(double v);

}  // namespace iman
