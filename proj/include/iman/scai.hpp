#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "iman/rng.hpp"
#include "iman/tensor.hpp"

namespace iman {

// Per-pair rotation angles for rotary position encoding:
// theta[i] = base^(-2i / head_dim). Pair i of a head vector is rotated by
// pos * theta[i], so attention scores depend only on position differences.
struct RotaryFrequencies {
  std::size_t head_dim = 0;
  double base = 0.0;
  std::vector<double> theta;

  static RotaryFrequencies make(std::size_t head_dim, double base = 10000.0);
  // All-zero angles; turns rotary attention into plain attention. Test hook.
  static RotaryFrequencies zero_angles(std::size_t head_dim);
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // each [d_model, d_model]
  std::size_t num_heads = 0;

  static AttentionParams init(std::size_t d_model, std::size_t num_heads, Rng& rng);
  std::size_t d_model() const { return wq.dim(0); }
  std::size_t head_dim() const { return d_model() / num_heads; }
};

// Rotates each (x[2i], x[2i+1]) pair of every row by positions[row]*theta[i].
// Norm preserving; the backward pass is the inverse rotation.
Tensor rotary_rows(const Tensor& x, std::span<const long> positions,
                   const RotaryFrequencies& freqs);

// Single-vector rotation at one position.
Tensor apply_rotation(const Tensor& x, long pos, const RotaryFrequencies& freqs);

// <rotate(q, s), rotate(k, t)>; a function of s - t only.
double rotary_score(const Tensor& q, const Tensor& k, long s, long t,
                    const RotaryFrequencies& freqs);

// Multi-head self-attention with rotary q/k encoding. Values are not
// rotated. Scores scaled by 1/sqrt(head_dim), softmax over keys, heads
// concatenated, output projection applied.
Tensor scai_attention(const Tensor& x, std::span<const long> positions,
                      const AttentionParams& params, const RotaryFrequencies& freqs);

}  // namespace iman
