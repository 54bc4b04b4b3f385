#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iman/experiment.hpp"
#include "iman/gradcheck.hpp"
#include "iman/model.hpp"

namespace iman {

// Moves a freshly initialized model to a generic random point for gradient
// certification: offset-conv biases sit mid-cell so bilinear sampling stays
// away from its integer-grid kinks, and DCMC hidden biases stay away from
// the rectifier kink. Everything else gets small random values.
void randomize_for_gradcheck(ImanModel& model, Rng& rng);

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;  // worst over all points
  std::size_t points = 0;
  double seconds = 0.0;
  bool passed = false;
};

struct GradSuiteOptions {
  double tol = 1e-4;
  double step = 1e-4;
  std::size_t points = 10;
  std::uint64_t seed = 1;
  ModelConfig model_cfg;  // shapes for all four targets come from here
  // Coordinate budgets; 0 = exhaustive. Large layers use a random subset
  // per point so the suite fits a CPU time budget.
  std::size_t max_coords_dcmc = 0;
  std::size_t max_coords_attention = 0;
  std::size_t max_coords_cafa = 0;
  std::size_t max_coords_model = 0;
};

// Certifies dcmc_forward, scai_attention, cafa_forward, and the full model
// loss at `points` random points each.
std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& opts);

struct SelfTestEntry {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Oracle-equivalence properties: every implementation path that has an
// independent reference is evaluated against it.
std::vector<SelfTestEntry> run_selftest(std::uint64_t seed);

}  // namespace iman
