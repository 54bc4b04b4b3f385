#include <algorithm>
#include <cmath>

#include "iman/experiment.hpp"

namespace iman {

void SyntheticSpec::validate() const {
  if (n_samples < 10) throw ParamError("synthetic cohort needs at least 10 samples");
  if (image_shape.size() != 3) throw ParamError("image_shape must be [C,H,W]");
  if (ebv_dim == 0 || normal_dim == 0) throw ParamError("field dims must be positive");
  if (signal_strength < 0.0 || noise_scale < 0.0)
    throw ParamError("signal_strength and noise_scale must be nonnegative");
  const double total = train_frac + val_frac + test_frac;
  if (std::fabs(total - 1.0) > 1e-9)
    throw ParamError("split fractions must sum to 1, got " + std::to_string(total));
  if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0)
    throw ParamError("all split fractions must be positive");
}

namespace {

std::vector<double> unit_direction(std::size_t dim, Rng& rng) {
  std::vector<double> u = rng.normal_vector(dim);
  double norm = 0.0;
  for (double v : u) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : u) v /= norm;
  return u;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng(spec.seed).split("data");

  const std::size_t n = spec.n_samples;
  const std::size_t C = spec.image_shape[0], H = spec.image_shape[1], W = spec.image_shape[2];

  // Fixed per-cohort signal directions for the two field modalities.
  const auto u_ebv = unit_direction(spec.ebv_dim, rng);
  const auto u_normal = unit_direction(spec.normal_dim, rng);

  // One blob center per image modality, spread across the frame.
  const double centers[kNumImageModalities][2] = {
      {0.35 * static_cast<double>(H - 1), 0.35 * static_cast<double>(W - 1)},
      {0.50 * static_cast<double>(H - 1), 0.50 * static_cast<double>(W - 1)},
      {0.65 * static_cast<double>(H - 1), 0.65 * static_cast<double>(W - 1)}};
  const double blob_width = static_cast<double>(std::min(H, W)) / 6.0;

  // Latent draws, re-drawn as a block until the class balance constraint
  // holds (only binding for n >= 200; typically satisfied on the first try).
  std::vector<double> z(n);
  for (int attempt = 0;; ++attempt) {
    std::size_t positives = 0;
    for (auto& v : z) {
      v = rng.next_normal();
      if (v > 0.0) ++positives;
    }
    if (n < 200) break;
    const double balance = static_cast<double>(positives) / static_cast<double>(n);
    if (std::fabs(balance - 0.5) <= 0.05) break;
    if (attempt >= 1000)
      throw ConstraintError("could not draw a class-balanced cohort after 1000 attempts");
  }

  Dataset ds;
  ds.image_shape = spec.image_shape;
  ds.ebv_dim = spec.ebv_dim;
  ds.normal_dim = spec.normal_dim;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PatientSample s;
    s.id = static_cast<std::int64_t>(i);
    s.label = z[i] > 0.0 ? 1 : 0;

    std::vector<double> ebv(spec.ebv_dim);
    for (std::size_t j = 0; j < spec.ebv_dim; ++j)
      ebv[j] = spec.signal_strength * z[i] * u_ebv[j] + spec.noise_scale * rng.next_normal();
    s.ebv = Tensor::from({spec.ebv_dim}, std::move(ebv));

    std::vector<double> normal(spec.normal_dim);
    for (std::size_t j = 0; j < spec.normal_dim; ++j)
      normal[j] = spec.signal_strength * z[i] * u_normal[j] + spec.noise_scale * rng.next_normal();
    s.normal = Tensor::from({spec.normal_dim}, std::move(normal));

    for (std::size_t m = 0; m < kNumImageModalities; ++m) {
      std::vector<double> img(C * H * W);
      const double peak = spec.signal_strength * z[i];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t col = 0; col < W; ++col) {
            const double dr = static_cast<double>(r) - centers[m][0];
            const double dc = static_cast<double>(col) - centers[m][1];
            const double blob =
                peak * std::exp(-(dr * dr + dc * dc) / (2.0 * blob_width * blob_width));
            img[(c * H + r) * W + col] = blob + spec.noise_scale * rng.next_normal();
          }
      s.images[m] = Tensor::from(spec.image_shape, std::move(img));
    }
    ds.samples.push_back(std::move(s));
  }

  // Shuffled split assignment.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(spec.train_frac * double(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(spec.val_frac * double(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw ParamError("split fractions leave an empty split for n = " + std::to_string(n));
  ds.train_idx.assign(order.begin(), order.begin() + n_train);
  ds.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  ds.test_idx.assign(order.begin() + n_train + n_val, order.end());
  // Canonical ascending order; membership is random, storage is not.
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  std::sort(ds.val_idx.begin(), ds.val_idx.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
  return ds;
}

}  // namespace iman
