#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "iman/tensor.hpp"

namespace iman {

// Sampling-point layout of a kernel with an arbitrary point count: a
// near-square grid of round(sqrt(n)) columns, remainder points appended on
// one extra row.
struct KernelGeometry {
  std::size_t num_param = 0;
  std::vector<std::pair<long, long>> coords;  // (row, col), nonnegative, distinct
};

// round() on sqrt uses round-half-to-even, so e.g. num_param=2 gives a
// 2x1 column.
KernelGeometry initial_coordinates(std::size_t num_param);

struct CafaParams {
  KernelGeometry geometry;
  Tensor offset_weight;  // [2*num_param, C, 3, 3], zero at init
  Tensor offset_bias;    // [2*num_param], zero at init
  Tensor depthwise;      // [C, num_param]
  std::size_t stride = 1;

  // Offset predictor starts at zero so sampling begins on the regular
  // grid; depthwise weights start uniform at 1/num_param.
  static CafaParams init(std::size_t channels, std::size_t num_param, std::size_t stride);
  std::size_t num_param() const { return geometry.num_param; }
  std::size_t channels() const { return depthwise.dim(0); }
};

// 3x3 offset-predicting convolution (pad 1, stride = sampling stride).
// Output channel 2k is the row offset of sample point k, channel 2k+1 the
// column offset.
Tensor predict_offsets(const Tensor& image, const CafaParams& params);

// offsets + base grid + geometry coords -> absolute sample positions, same
// channel layout as predict_offsets.
Tensor absolute_positions(const Tensor& offsets, const KernelGeometry& geometry,
                          std::size_t stride);

// Bilinear gather of every sample point: [C,H,W] x [2K,H',W'] -> [C,K,H',W'].
// Out-of-range corners contribute zero; differentiable in both the image and
// the positions.
Tensor resample_bilinear(const Tensor& image, const Tensor& positions);

// Per-channel weighted sum over the sampled-point axis:
// [C,K,H',W'] x [C,K] -> [C,H',W'].
Tensor depthwise_combine(const Tensor& samples, const Tensor& weights);

// Full layer: predict offsets, build positions, resample, aggregate.
Tensor cafa_forward(const Tensor& image, const CafaParams& params);

}  // namespace iman
