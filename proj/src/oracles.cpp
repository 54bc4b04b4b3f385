#include "iman/oracles.hpp"

#include <cmath>

namespace iman::oracle {

std::vector<double> matmul(std::span<const double> a, std::size_t m, std::size_t k,
                           std::span<const double> b, std::size_t n) {
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      y[i * n + j] = acc;
    }
  return y;
}

std::vector<double> softmax_direct(std::span<const double> x) {
  std::vector<double> y(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i]);
    sum += y[i];
  }
  for (auto& v : y) v /= sum;
  return y;
}

void mean_var_two_pass(std::span<const double> x, double& mean, double& var) {
  mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
}

std::vector<double> layer_norm_direct(std::span<const double> x, std::span<const double> gain,
                                      std::span<const double> bias, double eps) {
  double mean = 0.0, var = 0.0;
  mean_var_two_pass(x, mean, var);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = gain[i] * (x[i] - mean) / std::sqrt(var + eps) + bias[i];
  return y;
}

std::vector<double> rotation_matrix(long pos, std::span<const double> theta) {
  const std::size_t hd = 2 * theta.size();
  std::vector<double> r(hd * hd, 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double a = static_cast<double>(pos) * theta[i];
    r[(2 * i) * hd + 2 * i] = std::cos(a);
    r[(2 * i) * hd + 2 * i + 1] = -std::sin(a);
    r[(2 * i + 1) * hd + 2 * i] = std::sin(a);
    r[(2 * i + 1) * hd + 2 * i + 1] = std::cos(a);
  }
  return r;
}

namespace {

std::vector<double> mat_vec(std::span<const double> m, std::size_t rows, std::size_t cols,
                            std::span<const double> v) {
  std::vector<double> y(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) y[i] += m[i * cols + j] * v[j];
  return y;
}

std::vector<double> attention_core(std::span<const double> x, std::size_t n, std::size_t d,
                                   std::span<const double> wq, std::span<const double> wk,
                                   std::span<const double> wv, std::span<const double> wo,
                                   std::size_t num_heads, std::span<const long> positions,
                                   std::span<const double> theta, bool use_rotation) {
  const std::size_t hd = d / num_heads;
  const auto q = matmul(x, n, d, wq, d);
  const auto k = matmul(x, n, d, wk, d);
  const auto v = matmul(x, n, d, wv, d);

  std::vector<double> merged(n * d, 0.0);
  for (std::size_t h = 0; h < num_heads; ++h) {
    // Per-row head vectors, rotated by the explicit matrix when requested.
    std::vector<std::vector<double>> qh(n), kh(n), vh(n);
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> qr(hd), kr(hd), vr(hd);
      for (std::size_t j = 0; j < hd; ++j) {
        qr[j] = q[r * d + h * hd + j];
        kr[j] = k[r * d + h * hd + j];
        vr[j] = v[r * d + h * hd + j];
      }
      if (use_rotation) {
        const auto rot = rotation_matrix(positions[r], theta);
        qr = mat_vec(rot, hd, hd, qr);
        kr = mat_vec(rot, hd, hd, kr);
      }
      qh[r] = std::move(qr);
      kh[r] = std::move(kr);
      vh[r] = std::move(vr);
    }
    // Full score matrix.
    std::vector<double> scores(n * n);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < hd; ++j) acc += qh[s][j] * kh[t][j];
        scores[s * n + t] = acc / std::sqrt(static_cast<double>(hd));
      }
    for (std::size_t s = 0; s < n; ++s) {
      const auto row = softmax_direct(std::span<const double>(&scores[s * n], n));
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < hd; ++j) merged[s * d + h * hd + j] += row[t] * vh[t][j];
    }
  }
  return matmul(merged, n, d, wo, d);
}

}  // namespace

std::vector<double> rotary_attention_dense(std::span<const double> x, std::size_t n,
                                           std::size_t d, std::span<const long> positions,
                                           std::span<const double> wq, std::span<const double> wk,
                                           std::span<const double> wv, std::span<const double> wo,
                                           std::size_t num_heads, std::span<const double> theta) {
  return attention_core(x, n, d, wq, wk, wv, wo, num_heads, positions, theta, true);
}

std::vector<double> attention_plain(std::span<const double> x, std::size_t n, std::size_t d,
                                    std::span<const double> wq, std::span<const double> wk,
                                    std::span<const double> wv, std::span<const double> wo,
                                    std::size_t num_heads) {
  return attention_core(x, n, d, wq, wk, wv, wo, num_heads, {}, {}, false);
}

std::vector<double> conv2d_direct(std::span<const double> x, std::size_t c, std::size_t h,
                                  std::size_t w, std::span<const double> weight, std::size_t o,
                                  std::size_t kh, std::size_t kw, std::span<const double> bias,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(o * ho * wo, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = bias[oc];
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t t = 0; t < kw; ++t) {
              const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long s = static_cast<long>(j * stride + t) - static_cast<long>(pad);
              if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w))
                continue;
              acc += weight[((oc * c + ic) * kh + u) * kw + t] * x[(ic * h + r) * w + s];
            }
        y[(oc * ho + i) * wo + j] = acc;
      }
  return y;
}

std::vector<std::pair<long, long>> sample_coords_reference(std::size_t num_param) {
  // Re-derivation: grow a square-ish grid point by point in row-major order
  // until num_param points exist, with row width round-half-even(sqrt(n)).
  const double root = std::sqrt(static_cast<double>(num_param));
  long width = static_cast<long>(root);
  const double frac = root - static_cast<double>(width);
  if (frac > 0.5 || (frac == 0.5 && width % 2 == 1)) ++width;
  std::vector<std::pair<long, long>> coords;
  long r = 0, c = 0;
  while (coords.size() < num_param) {
    coords.emplace_back(r, c);
    if (++c == width) {
      c = 0;
      ++r;
    }
  }
  return coords;
}

std::vector<double> fixed_grid_conv(std::span<const double> image, std::size_t c, std::size_t h,
                                    std::size_t w,
                                    const std::vector<std::pair<long, long>>& coords,
                                    std::span<const double> depthwise, std::size_t stride,
                                    std::size_t out_h, std::size_t out_w) {
  const std::size_t k = coords.size();
  std::vector<double> y(c * out_h * out_w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
          const long r = static_cast<long>(i * stride) + coords[p].first;
          const long s = static_cast<long>(j * stride) + coords[p].second;
          const double v = (r >= 0 && s >= 0 && r < static_cast<long>(h) &&
                            s < static_cast<long>(w))
                               ? image[(ch * h + r) * w + s]
                               : 0.0;
          acc += depthwise[ch * k + p] * v;
        }
        y[(ch * out_h + i) * out_w + j] = acc;
      }
  return y;
}

std::vector<double> deformable_enumerate(std::span<const double> image, std::size_t c,
                                         std::size_t h, std::size_t w,
                                         std::span<const double> offset_weight,
                                         std::span<const double> offset_bias,
                                         const std::vector<std::pair<long, long>>& coords,
                                         std::span<const double> depthwise, std::size_t stride,
                                         std::size_t out_h, std::size_t out_w) {
  const std::size_t k = coords.size();
  const auto offsets =
      conv2d_direct(image, c, h, w, offset_weight, 2 * k, 3, 3, offset_bias, stride, 1);
  const auto value_at = [&](std::size_t ch, long r, long s) -> double {
    if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) return 0.0;
    return image[(ch * h + r) * w + s];
  };
  std::vector<double> y(c * out_h * out_w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
          const double py = static_cast<double>(i * stride) +
                            static_cast<double>(coords[p].first) +
                            offsets[((2 * p) * out_h + i) * out_w + j];
          const double px = static_cast<double>(j * stride) +
                            static_cast<double>(coords[p].second) +
                            offsets[((2 * p + 1) * out_h + i) * out_w + j];
          const double fy = std::floor(py), fx = std::floor(px);
          const long r0 = static_cast<long>(fy), c0 = static_cast<long>(fx);
          const double dy = py - fy, dx = px - fx;
          const double sampled = (1.0 - dy) * (1.0 - dx) * value_at(ch, r0, c0) +
                                 (1.0 - dy) * dx * value_at(ch, r0, c0 + 1) +
                                 dy * (1.0 - dx) * value_at(ch, r0 + 1, c0) +
                                 dy * dx * value_at(ch, r0 + 1, c0 + 1);
          acc += depthwise[ch * k + p] * sampled;
        }
        y[(ch * out_h + i) * out_w + j] = acc;
      }
  return y;
}

std::optional<double> auc_pairs(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

ConfusionReport metrics_bruteforce(std::span<const double> scores, std::span<const int> labels,
                                   double threshold) {
  ConfusionReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1 && predicted) ++r.tp;
    if (labels[i] == 0 && predicted) ++r.fp;
    if (labels[i] == 0 && !predicted) ++r.tn;
    if (labels[i] == 1 && !predicted) ++r.fn;
  }
  const double total = static_cast<double>(r.tp + r.fp + r.tn + r.fn);
  r.accuracy = total > 0 ? static_cast<double>(r.tp + r.tn) / total : 0.0;
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
  r.auc = auc_pairs(scores, labels);
  return r;
}

}  // namespace iman::oracle
