#include "iman/scai.hpp"

#include <cmath>
#include <string>

namespace iman {

RotaryFrequencies RotaryFrequencies::make(std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0)
    throw ConfigError("rotary head_dim must be even and positive, got " + std::to_string(head_dim));
  if (base <= 0.0) throw ConfigError("rotary base must be positive");
  RotaryFrequencies f;
  f.head_dim = head_dim;
  f.base = base;
  f.theta.resize(head_dim / 2);
  for (std::size_t i = 0; i < f.theta.size(); ++i)
    f.theta[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  return f;
}

RotaryFrequencies RotaryFrequencies::zero_angles(std::size_t head_dim) {
  if (head_dim == 0 || head_dim % 2 != 0)
    throw ConfigError("rotary head_dim must be even and positive, got " + std::to_string(head_dim));
  RotaryFrequencies f;
  f.head_dim = head_dim;
  f.base = 0.0;
  f.theta.assign(head_dim / 2, 0.0);
  return f;
}

Tensor rotary_rows(const Tensor& x, std::span<const long> positions,
                   const RotaryFrequencies& freqs) {
  if (x.ndim() != 2 || x.dim(1) != freqs.head_dim)
    throw ShapeError("rotary_rows: expected [n," + std::to_string(freqs.head_dim) + "], got " +
                     shape_str(x.shape()));
  const std::size_t n = x.dim(0), hd = freqs.head_dim;
  if (positions.size() != n)
    throw ShapeError("rotary_rows: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(n) + " rows");

  const auto& xv = x.data();
  std::vector<double> y(xv.size());
  auto pos = std::make_shared<std::vector<long>>(positions.begin(), positions.end());
  auto theta = std::make_shared<std::vector<double>>(freqs.theta);
  for (std::size_t r = 0; r < n; ++r) {
    const double p = static_cast<double>((*pos)[r]);
    for (std::size_t i = 0; i < hd / 2; ++i) {
      const double a = p * (*theta)[i];
      const double c = std::cos(a), s = std::sin(a);
      const double x1 = xv[r * hd + 2 * i], x2 = xv[r * hd + 2 * i + 1];
      y[r * hd + 2 * i] = x1 * c - x2 * s;
      y[r * hd + 2 * i + 1] = x2 * c + x1 * s;
    }
  }
  return detail::make_node({n, hd}, std::move(y), {x}, [x, pos, theta, n, hd](const Tensor& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.grad_buffer();
    const auto& g = out.grad();
    for (std::size_t r = 0; r < n; ++r) {
      const double p = static_cast<double>((*pos)[r]);
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double a = p * (*theta)[i];
        const double c = std::cos(a), s = std::sin(a);
        const double g1 = g[r * hd + 2 * i], g2 = g[r * hd + 2 * i + 1];
        gx[r * hd + 2 * i] += g1 * c + g2 * s;
        gx[r * hd + 2 * i + 1] += -g1 * s + g2 * c;
      }
    }
  });
}

Tensor apply_rotation(const Tensor& x, long pos, const RotaryFrequencies& freqs) {
  if (x.ndim() != 1 || x.numel() != freqs.head_dim)
    throw ShapeError("apply_rotation: expected a head_dim vector, got " + shape_str(x.shape()));
  const long p[1] = {pos};
  return reshape(rotary_rows(reshape(x, {1, freqs.head_dim}), std::span<const long>(p, 1), freqs),
                 {freqs.head_dim});
}

double rotary_score(const Tensor& q, const Tensor& k, long s, long t,
                    const RotaryFrequencies& freqs) {
  NoGradGuard no_grad;
  const Tensor qr = apply_rotation(q, s, freqs);
  const Tensor kr = apply_rotation(k, t, freqs);
  double acc = 0.0;
  for (std::size_t i = 0; i < qr.numel(); ++i) acc += qr.at(i) * kr.at(i);
  return acc;
}

AttentionParams AttentionParams::init(std::size_t d_model, std::size_t num_heads, Rng& rng) {
  if (num_heads == 0 || d_model % num_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if ((d_model / num_heads) % 2 != 0)
    throw ConfigError("per-head dim " + std::to_string(d_model / num_heads) +
                      " must be even for rotary encoding");
  AttentionParams p;
  p.num_heads = num_heads;
  const double s = 0.02;
  p.wq = Tensor::param({d_model, d_model}, rng.trunc_normal_vector(d_model * d_model, s));
  p.wk = Tensor::param({d_model, d_model}, rng.trunc_normal_vector(d_model * d_model, s));
  p.wv = Tensor::param({d_model, d_model}, rng.trunc_normal_vector(d_model * d_model, s));
  p.wo = Tensor::param({d_model, d_model}, rng.trunc_normal_vector(d_model * d_model, s));
  return p;
}

Tensor scai_attention(const Tensor& x, std::span<const long> positions,
                      const AttentionParams& params, const RotaryFrequencies& freqs) {
  if (x.ndim() != 2) throw ShapeError("scai_attention input must be [n,d_model]");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (d != params.d_model())
    throw ShapeError("scai_attention: input width " + std::to_string(d) +
                     " does not match projections " + shape_str(params.wq.shape()));
  if (positions.size() != n)
    throw ShapeError("scai_attention: positions length " + std::to_string(positions.size()) +
                     " for sequence of " + std::to_string(n));
  for (long p : positions)
    if (p < 0) throw ParamError("scai_attention positions must be nonnegative");
  const std::size_t hd = params.head_dim();
  if (freqs.head_dim != hd)
    throw ShapeError("rotary frequencies built for head_dim " + std::to_string(freqs.head_dim) +
                     ", attention uses " + std::to_string(hd));

  const Tensor q = matmul(x, params.wq);
  const Tensor k = matmul(x, params.wk);
  const Tensor v = matmul(x, params.wv);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<Tensor> heads;
  heads.reserve(params.num_heads);
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    const std::size_t c0 = h * hd, c1 = (h + 1) * hd;
    const Tensor qr = rotary_rows(slice_cols(q, c0, c1), positions, freqs);
    const Tensor kr = rotary_rows(slice_cols(k, c0, c1), positions, freqs);
    const Tensor scores = scale(matmul(qr, transpose(kr)), inv_scale);
    const Tensor attn = softmax(scores, 1);
    heads.push_back(matmul(attn, slice_cols(v, c0, c1)));
  }
  return matmul(concat_cols(heads), params.wo);
}

}  // namespace iman
