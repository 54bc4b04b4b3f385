#include "iman/dcmc.hpp"

#include <algorithm>
#include <string>

namespace iman {

DcmcParams DcmcParams::init(std::size_t field_dim, std::size_t channels, Rng& rng, double eps) {
  if (field_dim == 0 || channels == 0) throw ConfigError("dcmc dims must be positive");
  if (eps <= 0.0) throw ParamError("dcmc eps must be positive");
  const std::size_t hidden = std::max(channels, 2 * field_dim);
  const double s = 0.02;
  DcmcParams p;
  p.eps = eps;
  p.sigma_w1 = Tensor::param({field_dim, hidden}, rng.trunc_normal_vector(field_dim * hidden, s));
  p.sigma_b1 = Tensor::param({hidden}, std::vector<double>(hidden, 0.0));
  p.sigma_w2 = Tensor::param({hidden, channels}, std::vector<double>(hidden * channels, 0.0));
  p.sigma_b2 = Tensor::param({channels}, std::vector<double>(channels, 1.0));
  p.gamma_w1 = Tensor::param({field_dim, hidden}, rng.trunc_normal_vector(field_dim * hidden, s));
  p.gamma_b1 = Tensor::param({hidden}, std::vector<double>(hidden, 0.0));
  p.gamma_w2 = Tensor::param({hidden, channels}, std::vector<double>(hidden * channels, 0.0));
  p.gamma_b2 = Tensor::param({channels}, std::vector<double>(channels, 0.0));
  return p;
}

std::pair<Tensor, Tensor> instance_stats(const Tensor& image, double eps) {
  if (image.ndim() != 3) throw ShapeError("instance_stats expects [C,H,W], got " + shape_str(image.shape()));
  if (eps <= 0.0) throw ParamError("instance_stats eps must be positive");
  const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  const Tensor flat = reshape(image, {c, hw});
  const Tensor mu = mean_axis(flat, 1);
  const Tensor centered = shift_rows(flat, neg(mu));
  const Tensor var = mean_axis(mul(centered, centered), 1);
  return {mu, sqrt(add_scalar(var, eps))};
}

namespace {

Tensor perceptron(const Tensor& field, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                  const Tensor& b2) {
  const Tensor row = reshape(field, {1, field.numel()});
  const Tensor hidden = relu(add_rowvec(matmul(row, w1), b1));
  const Tensor out = add_rowvec(matmul(hidden, w2), b2);
  return reshape(out, {out.dim(1)});
}

}  // namespace

std::pair<Tensor, Tensor> modulation_params(const Tensor& field, const DcmcParams& params) {
  if (field.numel() != params.field_dim())
    throw ParamError("modulation_params: field length " + std::to_string(field.numel()) +
                     " does not match perceptron input dim " + std::to_string(params.field_dim()));
  return {perceptron(field, params.sigma_w1, params.sigma_b1, params.sigma_w2, params.sigma_b2),
          perceptron(field, params.gamma_w1, params.gamma_b1, params.gamma_w2, params.gamma_b2)};
}

Tensor dcmc_forward(const Tensor& image, const Tensor& field, const DcmcParams& params) {
  if (image.ndim() != 3) throw ShapeError("dcmc_forward expects [C,H,W], got " + shape_str(image.shape()));
  if (image.dim(0) != params.channels())
    throw ShapeError("dcmc_forward: image has " + std::to_string(image.dim(0)) +
                     " channels, params expect " + std::to_string(params.channels()));
  const auto [mu, sd] = instance_stats(image, params.eps);
  const auto [sigma_f, gamma_f] = modulation_params(field, params);
  const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  const Tensor flat = reshape(image, {c, hw});
  const Tensor normalized = scale_rows(shift_rows(flat, neg(mu)), recip(sd));
  const Tensor out = shift_rows(scale_rows(normalized, sigma_f), gamma_f);
  return reshape(out, image.shape());
}

}  // namespace iman
