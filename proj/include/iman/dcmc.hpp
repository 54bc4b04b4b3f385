#pragma once

#include <utility>

#include "iman/rng.hpp"
#include "iman/tensor.hpp"

namespace iman {

// Two small perceptrons predicting per-channel scale and shift from a field
// feature vector. Final layers start at zero with bias 1 (scale branch) and
// 0 (shift branch), so the layer is a pure per-channel standardization at
// initialization.
struct DcmcParams {
  Tensor sigma_w1, sigma_b1, sigma_w2, sigma_b2;  // [dF,h],[h],[h,C],[C]
  Tensor gamma_w1, gamma_b1, gamma_w2, gamma_b2;
  double eps = 1e-5;  // variance floor inside sqrt

  static DcmcParams init(std::size_t field_dim, std::size_t channels, Rng& rng,
                         double eps = 1e-5);
  std::size_t field_dim() const { return sigma_w1.dim(0); }
  std::size_t hidden_dim() const { return sigma_w1.dim(1); }
  std::size_t channels() const { return sigma_b2.numel(); }
};

// Per-channel mean and sqrt(population variance + eps) over spatial
// positions of a [C,H,W] map. Differentiable.
std::pair<Tensor, Tensor> instance_stats(const Tensor& image, double eps);

// sigma(F), gamma(F): two independent rectifier perceptrons, outputs
// unconstrained.
std::pair<Tensor, Tensor> modulation_params(const Tensor& field, const DcmcParams& params);

// sigma(F) * (I - mu(I)) / sd(I) + gamma(F), per channel over spatial
// positions.
Tensor dcmc_forward(const Tensor& image, const Tensor& field, const DcmcParams& params);

}  // namespace iman
