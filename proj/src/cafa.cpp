#include "iman/cafa.hpp"

#include <cmath>
#include <string>

namespace iman {

KernelGeometry initial_coordinates(std::size_t num_param) {
  if (num_param < 1) throw ParamError("num_param must be at least 1");
  const long base_int =
      static_cast<long>(std::nearbyint(std::sqrt(static_cast<double>(num_param))));
  const long row_number = static_cast<long>(num_param) / base_int;
  const long mod_number = static_cast<long>(num_param) % base_int;

  KernelGeometry g;
  g.num_param = num_param;
  g.coords.reserve(num_param);
  for (long r = 0; r < row_number; ++r)
    for (long c = 0; c < base_int; ++c) g.coords.emplace_back(r, c);
  for (long c = 0; c < mod_number; ++c) g.coords.emplace_back(row_number, c);
  return g;
}

CafaParams CafaParams::init(std::size_t channels, std::size_t num_param, std::size_t stride) {
  if (channels == 0) throw ConfigError("cafa channels must be positive");
  if (stride == 0) throw ConfigError("cafa stride must be positive");
  CafaParams p;
  p.geometry = initial_coordinates(num_param);
  p.stride = stride;
  const std::size_t oc = 2 * num_param;
  p.offset_weight = Tensor::param({oc, channels, 3, 3}, std::vector<double>(oc * channels * 9, 0.0));
  p.offset_bias = Tensor::param({oc}, std::vector<double>(oc, 0.0));
  p.depthwise = Tensor::param({channels, num_param},
                              std::vector<double>(channels * num_param,
                                                  1.0 / static_cast<double>(num_param)));
  return p;
}

Tensor predict_offsets(const Tensor& image, const CafaParams& params) {
  if (image.ndim() != 3 || image.dim(0) != params.channels())
    throw ShapeError("predict_offsets: expected [" + std::to_string(params.channels()) +
                     ",H,W], got " + shape_str(image.shape()));
  return conv2d(image, params.offset_weight, params.offset_bias, params.stride, 1);
}

Tensor absolute_positions(const Tensor& offsets, const KernelGeometry& geometry,
                          std::size_t stride) {
  if (offsets.ndim() != 3 || offsets.dim(0) != 2 * geometry.num_param)
    throw ShapeError("absolute_positions: expected [" + std::to_string(2 * geometry.num_param) +
                     ",H',W'], got " + shape_str(offsets.shape()));
  const std::size_t ho = offsets.dim(1), wo = offsets.dim(2);
  std::vector<double> base(offsets.numel());
  for (std::size_t k = 0; k < geometry.num_param; ++k) {
    const double cr = static_cast<double>(geometry.coords[k].first);
    const double cc = static_cast<double>(geometry.coords[k].second);
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        base[((2 * k) * ho + i) * wo + j] = static_cast<double>(i * stride) + cr;
        base[((2 * k + 1) * ho + i) * wo + j] = static_cast<double>(j * stride) + cc;
      }
    }
  }
  return add(offsets, Tensor::from(offsets.shape(), std::move(base)));
}

Tensor resample_bilinear(const Tensor& image, const Tensor& positions) {
  if (image.ndim() != 3) throw ShapeError("resample_bilinear image must be [C,H,W]");
  if (positions.ndim() != 3 || positions.dim(0) % 2 != 0)
    throw ShapeError("resample_bilinear positions must be [2K,H',W'], got " +
                     shape_str(positions.shape()));
  if (!positions.all_finite()) throw EvalError("resample_bilinear: non-finite sample position");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t K = positions.dim(0) / 2, ho = positions.dim(1), wo = positions.dim(2);

  const auto& iv = image.data();
  const auto& pv = positions.data();
  const auto in_range = [&](long r, long c) {
    return r >= 0 && r < static_cast<long>(H) && c >= 0 && c < static_cast<long>(W);
  };
  const auto pixel = [&](std::size_t ch, long r, long c) -> double {
    return in_range(r, c) ? iv[(ch * H + r) * W + c] : 0.0;
  };

  std::vector<double> y(C * K * ho * wo);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const double py = pv[((2 * k) * ho + i) * wo + j];
        const double px = pv[((2 * k + 1) * ho + i) * wo + j];
        const long r0 = static_cast<long>(std::floor(py));
        const long c0 = static_cast<long>(std::floor(px));
        const double dy = py - static_cast<double>(r0);
        const double dx = px - static_cast<double>(c0);
        for (std::size_t c = 0; c < C; ++c) {
          const double val = (1.0 - dy) * (1.0 - dx) * pixel(c, r0, c0) +
                             (1.0 - dy) * dx * pixel(c, r0, c0 + 1) +
                             dy * (1.0 - dx) * pixel(c, r0 + 1, c0) +
                             dy * dx * pixel(c, r0 + 1, c0 + 1);
          y[((c * K + k) * ho + i) * wo + j] = val;
        }
      }
    }
  }

  return detail::make_node(
      {C, K, ho, wo}, std::move(y), {image, positions},
      [image, positions, C, H, W, K, ho, wo](const Tensor& out) {
        const auto& g = out.grad();
        const auto& iv = image.data();
        const auto& pv = positions.data();
        const bool need_img = image.requires_grad();
        const bool need_pos = positions.requires_grad();
        auto* gi = need_img ? &image.grad_buffer() : nullptr;
        auto* gp = need_pos ? &positions.grad_buffer() : nullptr;
        const auto in_range = [&](long r, long c) {
          return r >= 0 && r < static_cast<long>(H) && c >= 0 && c < static_cast<long>(W);
        };
        const auto pixel = [&](std::size_t ch, long r, long c) -> double {
          return in_range(r, c) ? iv[(ch * H + r) * W + c] : 0.0;
        };
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
              const double py = pv[((2 * k) * ho + i) * wo + j];
              const double px = pv[((2 * k + 1) * ho + i) * wo + j];
              const long r0 = static_cast<long>(std::floor(py));
              const long c0 = static_cast<long>(std::floor(px));
              const double dy = py - static_cast<double>(r0);
              const double dx = px - static_cast<double>(c0);
              double acc_dy = 0.0, acc_dx = 0.0;
              for (std::size_t c = 0; c < C; ++c) {
                const double go = g[((c * K + k) * ho + i) * wo + j];
                if (go == 0.0) continue;
                if (need_img) {
                  if (in_range(r0, c0)) (*gi)[(c * H + r0) * W + c0] += go * (1.0 - dy) * (1.0 - dx);
                  if (in_range(r0, c0 + 1)) (*gi)[(c * H + r0) * W + c0 + 1] += go * (1.0 - dy) * dx;
                  if (in_range(r0 + 1, c0)) (*gi)[(c * H + r0 + 1) * W + c0] += go * dy * (1.0 - dx);
                  if (in_range(r0 + 1, c0 + 1)) (*gi)[(c * H + r0 + 1) * W + c0 + 1] += go * dy * dx;
                }
                if (need_pos) {
                  const double v00 = pixel(c, r0, c0), v01 = pixel(c, r0, c0 + 1);
                  const double v10 = pixel(c, r0 + 1, c0), v11 = pixel(c, r0 + 1, c0 + 1);
                  acc_dy += go * ((1.0 - dx) * (v10 - v00) + dx * (v11 - v01));
                  acc_dx += go * ((1.0 - dy) * (v01 - v00) + dy * (v11 - v10));
                }
              }
              if (need_pos) {
                (*gp)[((2 * k) * ho + i) * wo + j] += acc_dy;
                (*gp)[((2 * k + 1) * ho + i) * wo + j] += acc_dx;
              }
            }
          }
        }
      });
}

Tensor depthwise_combine(const Tensor& samples, const Tensor& weights) {
  if (samples.ndim() != 4) throw ShapeError("depthwise_combine samples must be [C,K,H',W']");
  const std::size_t C = samples.dim(0), K = samples.dim(1), ho = samples.dim(2), wo = samples.dim(3);
  if (weights.ndim() != 2 || weights.dim(0) != C || weights.dim(1) != K)
    throw ShapeError("depthwise_combine weights must be [" + std::to_string(C) + "," +
                     std::to_string(K) + "], got " + shape_str(weights.shape()));
  const auto& sv = samples.data();
  const auto& wv = weights.data();
  const std::size_t hw = ho * wo;
  std::vector<double> y(C * hw, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < K; ++k) {
      const double w = wv[c * K + k];
      const double* src = &sv[(c * K + k) * hw];
      double* dst = &y[c * hw];
      for (std::size_t p = 0; p < hw; ++p) dst[p] += w * src[p];
    }
  return detail::make_node(
      {C, ho, wo}, std::move(y), {samples, weights}, [samples, weights, C, K, hw](const Tensor& out) {
        const auto& g = out.grad();
        const auto& sv = samples.data();
        const auto& wv = weights.data();
        if (samples.requires_grad()) {
          auto& gs = samples.grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k) {
              const double w = wv[c * K + k];
              double* dst = &gs[(c * K + k) * hw];
              const double* src = &g[c * hw];
              for (std::size_t p = 0; p < hw; ++p) dst[p] += w * src[p];
            }
        }
        if (weights.requires_grad()) {
          auto& gw = weights.grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < K; ++k) {
              const double* src = &sv[(c * K + k) * hw];
              const double* grow = &g[c * hw];
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += src[p] * grow[p];
              gw[c * K + k] += acc;
            }
        }
      });
}

Tensor cafa_forward(const Tensor& image, const CafaParams& params) {
  const Tensor offsets = predict_offsets(image, params);
  const Tensor positions = absolute_positions(offsets, params.geometry, params.stride);
  const Tensor samples = resample_bilinear(image, positions);
  return depthwise_combine(samples, params.depthwise);
}

}  // namespace iman
