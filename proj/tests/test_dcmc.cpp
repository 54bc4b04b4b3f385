#include <cmath>

#include "doctest.h"
#include "iman/dcmc.hpp"
#include "iman/gradcheck.hpp"
#include "iman/oracles.hpp"
#include "test_util.hpp"

using namespace iman;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {
constexpr double kEps = 1e-5;
}

TEST_CASE("instance_stats on a constant channel gives mu=value, sd=sqrt(eps)") {
  const Tensor image = Tensor::full({1, 2, 3}, 5.0);
  const auto [mu, sd] = instance_stats(image, kEps);
  CHECK(mu.at(0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(sd.at(0) == doctest::Approx(std::sqrt(kEps)).epsilon(1e-12));
}

TEST_CASE("instance_stats two-point channel by hand") {
  // Channel values {0,2}: mean 1, population variance 1.
  const Tensor image = Tensor::from({1, 1, 2}, {0.0, 2.0});
  const auto [mu, sd] = instance_stats(image, kEps);
  CHECK(mu.at(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sd.at(0) == doctest::Approx(std::sqrt(1.0 + kEps)).epsilon(1e-12));
}

TEST_CASE("instance_stats matches the two-pass oracle to 1e-12") {
  Rng rng(101);
  const Tensor image = rand_tensor({3, 4, 4}, rng, 2.0);
  const auto [mu, sd] = instance_stats(image, kEps);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    oracle::mean_var_two_pass(std::span<const double>(&image.data()[c * 16], 16), mean, var);
    CHECK(std::fabs(mu.at(c) - mean) <= 1e-12);
    CHECK(std::fabs(sd.at(c) - std::sqrt(var + kEps)) <= 1e-12);
  }
  CHECK_THROWS_AS(instance_stats(image, 0.0), ParamError);
}

TEST_CASE("modulation_params at init is identity: sigma=1, gamma=0 for any field") {
  Rng rng(55);
  DcmcParams p = DcmcParams::init(6, 3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor field = rand_tensor({6}, rng, 3.0);
    const auto [sigma_f, gamma_f] = modulation_params(field, p);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(sigma_f.at(c) == 1.0);
      CHECK(gamma_f.at(c) == 0.0);
    }
  }
}

TEST_CASE("modulation_params matches a hand-evaluated two-layer perceptron") {
  Rng rng(56);
  DcmcParams p = DcmcParams::init(2, 2, rng);
  // Overwrite with known weights: hidden = 4 = max(2, 2*2).
  auto fill = [](Tensor& t, double v) {
    for (auto& x : t.mutable_data()) x = v;
  };
  fill(p.sigma_w1, 0.5);
  fill(p.sigma_b1, -0.25);
  fill(p.sigma_w2, 2.0);
  fill(p.sigma_b2, 0.125);

  // Zero field: hidden = relu(-0.25) = 0, output = bias.
  const auto [sigma_zero, gamma_zero] = modulation_params(Tensor::zeros({2}), p);
  CHECK(sigma_zero.at(0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(gamma_zero.at(0) == 0.0);

  // Field (1, -2): preact = 0.5*(1-2) - 0.25 = -0.75 -> relu 0 -> out = 0.125.
  const auto [s1, g1] = modulation_params(Tensor::from({2}, {1.0, -2.0}), p);
  CHECK(s1.at(0) == doctest::Approx(0.125).epsilon(1e-15));

  // Field (2, 1): preact = 1.5 - 0.25 = 1.25 -> out = 0.125 + 4*2*1.25 = 10.125.
  const auto [s2, g2] = modulation_params(Tensor::from({2}, {2.0, 1.0}), p);
  CHECK(s2.at(0) == doctest::Approx(10.125).epsilon(1e-14));
  (void)g1;
  (void)g2;
}

TEST_CASE("modulation_params matches an independent matrix-product oracle to 1e-12") {
  Rng rng(57);
  DcmcParams p = DcmcParams::init(5, 4, rng);
  // Randomize the final layers so the check is non-trivial.
  p.sigma_w2 = Tensor::param({p.hidden_dim(), 4}, rng.normal_vector(p.hidden_dim() * 4, 0.3));
  p.sigma_b2 = Tensor::param({4}, rng.normal_vector(4, 0.3));
  const Tensor field = rand_tensor({5}, rng);

  const auto [sigma_f, gamma_f] = modulation_params(field, p);
  const auto hidden =
      oracle::matmul(field.data(), 1, 5, p.sigma_w1.data(), p.hidden_dim());
  std::vector<double> hact(hidden.size());
  for (std::size_t i = 0; i < hidden.size(); ++i)
    hact[i] = std::max(0.0, hidden[i] + p.sigma_b1.data()[i]);
  auto out = oracle::matmul(hact, 1, p.hidden_dim(), p.sigma_w2.data(), 4);
  for (std::size_t i = 0; i < 4; ++i) out[i] += p.sigma_b2.data()[i];
  CHECK(max_abs_diff(sigma_f, out) <= 1e-12);
  (void)gamma_f;

  CHECK_THROWS_AS(modulation_params(Tensor::zeros({3}), p), ParamError);
}

TEST_CASE("dcmc_forward with identity modulation standardizes per channel") {
  Rng rng(58);
  DcmcParams p = DcmcParams::init(4, 2, rng);  // init => sigma=1, gamma=0
  const Tensor image = rand_tensor({2, 5, 5}, rng, 3.0);
  const Tensor field = rand_tensor({4}, rng);
  const Tensor out = dcmc_forward(image, field, p);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    oracle::mean_var_two_pass(std::span<const double>(&out.data()[c * 25], 25), mean, var);
    CHECK(std::fabs(mean) <= 1e-10);
    // sd of output = true_sd / sqrt(true_var + eps), slightly below 1.
    double imean = 0.0, ivar = 0.0;
    oracle::mean_var_two_pass(std::span<const double>(&image.data()[c * 25], 25), imean, ivar);
    CHECK(std::fabs(std::sqrt(var) - std::sqrt(ivar) / std::sqrt(ivar + kEps)) <= 1e-10);
  }
}

TEST_CASE("dcmc_forward on constant channels returns gamma broadcast") {
  Rng rng(59);
  DcmcParams p = DcmcParams::init(3, 2, rng);
  // Force nonzero gamma output through its bias.
  p.gamma_b2 = Tensor::param({2}, {0.7, -1.2});
  const Tensor image =
      concat_rows({Tensor::full({1, 6}, 4.0), Tensor::full({1, 6}, -2.0)});
  const Tensor volume = reshape(image, {2, 2, 3});
  const Tensor out = dcmc_forward(volume, Tensor::zeros({3}), p);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(out.at(i) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(out.at(6 + i) == doctest::Approx(-1.2).epsilon(1e-12));
  }
}

TEST_CASE("dcmc_forward output statistics follow sigma and gamma") {
  Rng rng(60);
  DcmcParams p = DcmcParams::init(4, 3, rng);
  p.sigma_w2 = Tensor::param({p.hidden_dim(), 3}, rng.normal_vector(p.hidden_dim() * 3, 0.5));
  p.gamma_w2 = Tensor::param({p.hidden_dim(), 3}, rng.normal_vector(p.hidden_dim() * 3, 0.5));
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor image = rand_tensor({3, 4, 4}, rng, 1.5);
    const Tensor field = rand_tensor({4}, rng);
    const auto [sigma_f, gamma_f] = modulation_params(field, p);
    const Tensor out = dcmc_forward(image, field, p);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      oracle::mean_var_two_pass(std::span<const double>(&out.data()[c * 16], 16), mean, var);
      double imean = 0.0, ivar = 0.0;
      oracle::mean_var_two_pass(std::span<const double>(&image.data()[c * 16], 16), imean, ivar);
      CHECK(std::fabs(mean - gamma_f.at(c)) <= 1e-10);
      const double expected_sd =
          std::fabs(sigma_f.at(c)) * std::sqrt(ivar) / std::sqrt(ivar + kEps);
      CHECK(std::fabs(std::sqrt(var) - expected_sd) <= 1e-10);
    }
  }
}

TEST_CASE("normalized core is invariant to per-channel affine input changes") {
  // With eps=0 in the oracle the term (I-mu)/sd is exactly invariant under
  // I -> a*I + b (a > 0); with eps > 0 the deviation is bounded by eps/var.
  Rng rng(61);
  DcmcParams p = DcmcParams::init(3, 1, rng);
  const Tensor image = rand_tensor({1, 6, 6}, rng, 2.0);
  const Tensor field = rand_tensor({3}, rng);
  const double a = 2.5, b = -1.25;
  const Tensor scaled = add_scalar(scale(image, a), b);
  const Tensor out1 = dcmc_forward(image, field, p);
  const Tensor out2 = dcmc_forward(scaled, field, p);
  double var = 0.0, mean = 0.0;
  oracle::mean_var_two_pass(image.data(), mean, var);
  const double bound = 3.0 * kEps / var;  // loose but principled
  CHECK(max_abs_diff(out1, out2) <= bound + 1e-8);
}

TEST_CASE("dcmc_forward passes grad_check w.r.t. image, field, and all weights") {
  for (std::uint64_t point = 0; point < 10; ++point) {
    Rng rng(700 + point);
    DcmcParams p = DcmcParams::init(3, 2, rng);
    // Random final layers so modulation gradients are alive; hidden biases
    // bounded away from zero so rectifier preactivations clear the kink.
    p.sigma_w2 = Tensor::param({p.hidden_dim(), 2}, rng.normal_vector(p.hidden_dim() * 2, 0.4));
    p.gamma_w2 = Tensor::param({p.hidden_dim(), 2}, rng.normal_vector(p.hidden_dim() * 2, 0.4));
    for (auto& v : p.sigma_b1.mutable_data())
      v = (rng.next_u64() & 1 ? 1.0 : -1.0) * (0.4 + 0.1 * std::fabs(rng.next_normal()));
    for (auto& v : p.gamma_b1.mutable_data())
      v = (rng.next_u64() & 1 ? 1.0 : -1.0) * (0.4 + 0.1 * std::fabs(rng.next_normal()));

    const std::vector<Tensor> inputs = {rand_tensor({2, 3, 3}, rng), rand_tensor({3}, rng),
                                        p.sigma_w1, p.sigma_b1, p.sigma_w2, p.sigma_b2,
                                        p.gamma_w1, p.gamma_b1, p.gamma_w2, p.gamma_b2};
    const auto f = [](const std::vector<Tensor>& v) {
      DcmcParams q;
      q.eps = kEps;
      q.sigma_w1 = v[2];
      q.sigma_b1 = v[3];
      q.sigma_w2 = v[4];
      q.sigma_b2 = v[5];
      q.gamma_w1 = v[6];
      q.gamma_b1 = v[7];
      q.gamma_w2 = v[8];
      q.gamma_b2 = v[9];
      const Tensor out = dcmc_forward(v[0], v[1], q);
      std::vector<double> w(out.numel());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.2 + 0.05 * static_cast<double>(i);
      return sum_all(mul(out, Tensor::from(out.shape(), std::move(w))));
    };
    const auto report = grad_check_multi(f, inputs, {.step = 1e-4, .tol = 1e-4});
    INFO("point ", point, " max_rel=", report.max_relative_error);
    CHECK(report.passed);
  }
}
