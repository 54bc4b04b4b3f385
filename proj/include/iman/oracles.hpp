#pragma once

// Independent reference implementations used to cross-check the main code
// path. Everything here works on flat double vectors, is written as the
// most literal possible version of each definition, and deliberately shares
// no code with the library implementations it checks.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace iman::oracle {

// Triple-loop matrix product.
std::vector<double> matmul(std::span<const double> a, std::size_t m, std::size_t k,
                           std::span<const double> b, std::size_t n);

// exp/sum softmax of one lane, no stabilization tricks.
std::vector<double> softmax_direct(std::span<const double> x);

// Two-pass mean and population variance.
void mean_var_two_pass(std::span<const double> x, double& mean, double& var);

// Normalization of a single vector followed by the affine map.
std::vector<double> layer_norm_direct(std::span<const double> x, std::span<const double> gain,
                                      std::span<const double> bias, double eps);

// Explicit block-diagonal rotation matrix for one position (hd x hd).
std::vector<double> rotation_matrix(long pos, std::span<const double> theta);

// Rotary multi-head attention materializing every rotation matrix and the
// full n x n score matrix.
std::vector<double> rotary_attention_dense(std::span<const double> x, std::size_t n,
                                           std::size_t d, std::span<const long> positions,
                                           std::span<const double> wq, std::span<const double> wk,
                                           std::span<const double> wv, std::span<const double> wo,
                                           std::size_t num_heads, std::span<const double> theta);

// Standard position-free multi-head attention.
std::vector<double> attention_plain(std::span<const double> x, std::size_t n, std::size_t d,
                                    std::span<const double> wq, std::span<const double> wk,
                                    std::span<const double> wv, std::span<const double> wo,
                                    std::size_t num_heads);

// Sliding-window convolution with zero padding, [C,H,W] x [O,C,kh,kw].
std::vector<double> conv2d_direct(std::span<const double> x, std::size_t c, std::size_t h,
                                  std::size_t w, std::span<const double> weight, std::size_t o,
                                  std::size_t kh, std::size_t kw, std::span<const double> bias,
                                  std::size_t stride, std::size_t pad);

// Independent re-derivation of the sampling-coordinate layout.
std::vector<std::pair<long, long>> sample_coords_reference(std::size_t num_param);

// Fixed-grid aggregation: per output pixel, weighted sum of the image at
// base grid + geometry coordinates (zero outside), no offsets.
std::vector<double> fixed_grid_conv(std::span<const double> image, std::size_t c, std::size_t h,
                                    std::size_t w,
                                    const std::vector<std::pair<long, long>>& coords,
                                    std::span<const double> depthwise, std::size_t stride,
                                    std::size_t out_h, std::size_t out_w);

// Exhaustive re-evaluation of the deformable layer: offsets by
// conv2d_direct, then every output pixel, sample point, and corner
// enumerated explicitly.
std::vector<double> deformable_enumerate(std::span<const double> image, std::size_t c,
                                         std::size_t h, std::size_t w,
                                         std::span<const double> offset_weight,
                                         std::span<const double> offset_bias,
                                         const std::vector<std::pair<long, long>>& coords,
                                         std::span<const double> depthwise, std::size_t stride,
                                         std::size_t out_h, std::size_t out_w);

// Direct-count confusion metrics at a threshold; predictions are score > thr.
struct ConfusionReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  std::optional<double> auc;
};
ConfusionReport metrics_bruteforce(std::span<const double> scores, std::span<const int> labels,
                                   double threshold);

// AUC by literal enumeration of every (positive, negative) pair; ties 0.5.
std::optional<double> auc_pairs(std::span<const double> scores, std::span<const int> labels);

}  // namespace iman::oracle
