#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "iman/tensor.hpp"

namespace iman {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = false;
  std::size_t coords_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  // 0 checks every coordinate. A positive value checks a seed-determined
  // random subset, which keeps large-parameter checks inside a time budget.
  std::size_t max_coords = 0;
  std::uint64_t coord_seed = 0;
  // Perturb the given tensors directly instead of fresh copies. Needed when
  // f closes over a structure (a model) holding those same leaves. Values
  // are restored and gradients cleared on exit.
  bool in_place = false;
};

// Central-difference check of a scalar-valued function against its
// reverse-mode gradient: per coordinate, (f(x+h e_i) - f(x-h e_i)) / 2h
// versus the analytic entry, relative error over
// max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           const GradCheckOptions& opts = {});

// Same check with the coordinate space spanning several inputs (a layer's
// data plus each of its parameter tensors).
GradCheckReport grad_check_multi(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 const std::vector<Tensor>& xs,
                                 const GradCheckOptions& opts = {});

}  // namespace iman
