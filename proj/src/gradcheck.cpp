#include "iman/gradcheck.hpp"

#include <cmath>
#include <string>

#include "iman/rng.hpp"

namespace iman {

GradCheckReport grad_check_multi(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 const std::vector<Tensor>& xs, const GradCheckOptions& opts) {
  if (opts.step <= 0.0) throw ParamError("grad_check step must be positive");
  if (opts.tol < 0.0) throw ParamError("grad_check tol must be nonnegative");

  // Fresh leaves by default so perturbation never touches the caller's
  // tensors; in_place works on the originals and restores them.
  std::vector<Tensor> leaves;
  leaves.reserve(xs.size());
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (opts.in_place) {
      Tensor leaf = x;
      leaf.set_requires_grad(true);
      leaf.zero_grad();
      leaves.push_back(leaf);
    } else {
      leaves.push_back(Tensor::param(x.shape(), x.data()));
    }
    total += x.numel();
  }

  // One analytic pass.
  Tensor y = f(leaves);
  if (y.numel() != 1) throw ShapeError("grad_check requires a scalar-valued function");
  if (!std::isfinite(y.item())) throw EvalError("grad_check: f is not finite at the base point");
  y.backward();
  std::vector<double> analytic(total, 0.0);
  {
    std::size_t off = 0;
    for (const auto& leaf : leaves) {
      if (leaf.has_grad()) {
        const auto& g = leaf.grad();
        for (std::size_t i = 0; i < g.size(); ++i) analytic[off + i] = g[i];
      }
      off += leaf.numel();
    }
  }

  // Coordinates to probe.
  std::vector<std::size_t> coords;
  if (opts.max_coords > 0 && total > opts.max_coords) {
    Rng rng(opts.coord_seed);
    coords = rng.sample_without_replacement(total, opts.max_coords);
  } else {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  }

  NoGradGuard no_grad;
  const double h = opts.step;
  GradCheckReport report;
  report.coords_checked = coords.size();
  for (std::size_t flat : coords) {
    // Locate the owning leaf.
    std::size_t t = 0, off = 0;
    while (flat - off >= leaves[t].numel()) {
      off += leaves[t].numel();
      ++t;
    }
    const std::size_t i = flat - off;
    double& slot = leaves[t].mutable_data()[i];
    const double saved = slot;

    slot = saved + h;
    const double f_plus = f(leaves).item();
    slot = saved - h;
    const double f_minus = f(leaves).item();
    slot = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw EvalError("grad_check: non-finite f value at coordinate " + std::to_string(flat));

    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[flat];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = flat;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  report.passed = report.max_relative_error <= opts.tol;
  if (opts.in_place)
    for (auto& leaf : leaves) leaf.zero_grad();
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           const GradCheckOptions& opts) {
  return grad_check_multi([&f](const std::vector<Tensor>& xs) { return f(xs[0]); }, {x}, opts);
}

}  // namespace iman
