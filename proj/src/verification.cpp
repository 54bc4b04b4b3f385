#include "iman/verification.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "iman/cafa.hpp"
#include "iman/dcmc.hpp"
#include "iman/oracles.hpp"
#include "iman/scai.hpp"

namespace iman {

void randomize_for_gradcheck(ImanModel& model, Rng& rng) {
  for (auto& [name, tensor] : model.parameters()) {
    auto& values = const_cast<Tensor&>(tensor).mutable_data();
    if (name.find("offset.bias") != std::string::npos) {
      // Mid-cell sample positions: fractional parts tightly around 0.5,
      // many standard deviations from the bilinear kinks at integers.
      for (auto& v : values) v = 0.5 + 0.05 * rng.next_normal();
    } else if (name.find("offset.weight") != std::string::npos) {
      for (auto& v : values) v = 0.005 * rng.next_normal();
    } else if (name.find("dcmc") != std::string::npos && name.find(".b1") != std::string::npos) {
      for (auto& v : values)
        v = (rng.next_u64() & 1 ? 1.0 : -1.0) * (0.25 + 0.1 * std::fabs(rng.next_normal()));
    } else if (name.find("gain") != std::string::npos) {
      for (auto& v : values) v = 1.0 + 0.05 * rng.next_normal();
    } else {
      for (auto& v : values) v = 0.05 * rng.next_normal();
    }
  }
}

namespace {

// Weighted mean, not sum: keeping |f| near 1 keeps the cancellation noise
// of central differences (eps*|f|/2h) below the 1e-4 * 1e-8 error floor,
// so even near-zero gradient coordinates verify cleanly.
Tensor weighted_readout(const Tensor& out) {
  const double inv = 1.0 / static_cast<double>(out.numel());
  std::vector<double> w(out.numel());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = (0.4 + 0.2 * std::sin(0.7 * static_cast<double>(i))) * inv;
  return sum_all(mul(out, Tensor::from(out.shape(), std::move(w))));
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::from(std::move(shape), rng.normal_vector(n, scale));
}

GradSuiteEntry check_dcmc(const GradSuiteOptions& opts) {
  GradSuiteEntry entry;
  entry.name = "dcmc_forward";
  entry.passed = true;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t channels = opts.model_cfg.stem_channels;
  const std::size_t side_h = opts.model_cfg.stem_height();
  const std::size_t side_w = opts.model_cfg.stem_width();
  const std::size_t d_field = opts.model_cfg.d_model;
  for (std::size_t point = 0; point < opts.points; ++point) {
    Rng rng = Rng(opts.seed).split("dcmc").split(point);
    DcmcParams p = DcmcParams::init(d_field, channels, rng);
    // Hidden weights small and biases bounded away from zero so rectifier
    // preactivations sit many standard deviations from the kink.
    p.sigma_w1 = Tensor::param({d_field, p.hidden_dim()},
                               rng.normal_vector(d_field * p.hidden_dim(), 0.005));
    p.gamma_w1 = Tensor::param({d_field, p.hidden_dim()},
                               rng.normal_vector(d_field * p.hidden_dim(), 0.005));
    p.sigma_w2 =
        Tensor::param({p.hidden_dim(), channels}, rng.normal_vector(p.hidden_dim() * channels, 0.1));
    p.gamma_w2 =
        Tensor::param({p.hidden_dim(), channels}, rng.normal_vector(p.hidden_dim() * channels, 0.1));
    auto& b1s = p.sigma_b1.mutable_data();
    auto& b1g = p.gamma_b1.mutable_data();
    for (auto& v : b1s) v = (rng.next_u64() & 1 ? 1.0 : -1.0) * (0.25 + 0.1 * std::fabs(rng.next_normal()));
    for (auto& v : b1g) v = (rng.next_u64() & 1 ? 1.0 : -1.0) * (0.25 + 0.1 * std::fabs(rng.next_normal()));

    const std::vector<Tensor> inputs = {random_tensor({channels, side_h, side_w}, rng),
                                        random_tensor({d_field}, rng), p.sigma_w1, p.sigma_b1,
                                        p.sigma_w2, p.sigma_b2, p.gamma_w1, p.gamma_b1,
                                        p.gamma_w2, p.gamma_b2};
    const double eps = p.eps;
    const auto f = [eps](const std::vector<Tensor>& v) {
      DcmcParams q;
      q.eps = eps;
      q.sigma_w1 = v[2];
      q.sigma_b1 = v[3];
      q.sigma_w2 = v[4];
      q.sigma_b2 = v[5];
      q.gamma_w1 = v[6];
      q.gamma_b1 = v[7];
      q.gamma_w2 = v[8];
      q.gamma_b2 = v[9];
      return weighted_readout(dcmc_forward(v[0], v[1], q));
    };
    const auto report = grad_check_multi(f, inputs,
                                         {.step = opts.step,
                                          .tol = opts.tol,
                                          .max_coords = opts.max_coords_dcmc,
                                          .coord_seed = opts.seed + point});
    entry.points += 1;
    entry.passed = entry.passed && report.passed;
    if (report.max_relative_error > entry.report.max_relative_error) entry.report = report;
  }
  entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return entry;
}

GradSuiteEntry check_attention(const GradSuiteOptions& opts) {
  GradSuiteEntry entry;
  entry.name = "scai_attention";
  entry.passed = true;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t d = opts.model_cfg.d_model;
  const std::size_t n = opts.model_cfg.sequence_length(PresencePattern::all_present());
  const auto freqs = RotaryFrequencies::make(opts.model_cfg.head_dim(), opts.model_cfg.rotary_base);
  const std::size_t heads = opts.model_cfg.num_heads;
  std::vector<long> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<long>(i);

  for (std::size_t point = 0; point < opts.points; ++point) {
    Rng rng = Rng(opts.seed).split("scai").split(point);
    AttentionParams p = AttentionParams::init(d, heads, rng);
    const std::vector<Tensor> inputs = {random_tensor({n, d}, rng, 0.5), p.wq, p.wk, p.wv, p.wo};
    const auto f = [&freqs, &positions, heads](const std::vector<Tensor>& v) {
      AttentionParams q;
      q.num_heads = heads;
      q.wq = v[1];
      q.wk = v[2];
      q.wv = v[3];
      q.wo = v[4];
      return weighted_readout(scai_attention(v[0], positions, q, freqs));
    };
    const auto report = grad_check_multi(f, inputs,
                                         {.step = opts.step,
                                          .tol = opts.tol,
                                          .max_coords = opts.max_coords_attention,
                                          .coord_seed = opts.seed + point});
    entry.points += 1;
    entry.passed = entry.passed && report.passed;
    if (report.max_relative_error > entry.report.max_relative_error) entry.report = report;
  }
  entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return entry;
}

GradSuiteEntry check_cafa(const GradSuiteOptions& opts) {
  GradSuiteEntry entry;
  entry.name = "cafa_forward";
  entry.passed = true;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t C = opts.model_cfg.image_channels;
  const std::size_t H = opts.model_cfg.image_height;
  const std::size_t W = opts.model_cfg.image_width;
  const std::size_t K = opts.model_cfg.cafa_num_param;
  const std::size_t stride = opts.model_cfg.cafa_stride;

  for (std::size_t point = 0; point < opts.points; ++point) {
    Rng rng = Rng(opts.seed).split("cafa").split(point);
    // Sample positions concentrated mid-cell (fractional part ~ 0.5) so no
    // position sits near the integer-grid kinks of bilinear interpolation.
    std::vector<double> bias(2 * K);
    for (auto& v : bias) v = 0.5 + 0.05 * rng.next_normal();
    const std::vector<Tensor> inputs = {
        random_tensor({C, H, W}, rng),
        Tensor::from({2 * K, C, 3, 3}, rng.normal_vector(2 * K * C * 9, 0.005)),
        Tensor::from({2 * K}, std::move(bias)),
        Tensor::from({C, K}, rng.normal_vector(C * K, 0.5))};
    const auto f = [K, stride](const std::vector<Tensor>& v) {
      CafaParams q;
      q.geometry = initial_coordinates(K);
      q.stride = stride;
      q.offset_weight = v[1];
      q.offset_bias = v[2];
      q.depthwise = v[3];
      return weighted_readout(cafa_forward(v[0], q));
    };
    const auto report = grad_check_multi(f, inputs,
                                         {.step = opts.step,
                                          .tol = opts.tol,
                                          .max_coords = opts.max_coords_cafa,
                                          .coord_seed = opts.seed + point});
    entry.points += 1;
    entry.passed = entry.passed && report.passed;
    if (report.max_relative_error > entry.report.max_relative_error) entry.report = report;
  }
  entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return entry;
}

GradSuiteEntry check_model(const GradSuiteOptions& opts) {
  GradSuiteEntry entry;
  entry.name = "model_loss";
  entry.passed = true;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& cfg = opts.model_cfg;

  for (std::size_t point = 0; point < opts.points; ++point) {
    Rng rng = Rng(opts.seed).split("model").split(point);
    ImanModel model = ImanModel::init(cfg, rng);
    randomize_for_gradcheck(model, rng);

    PatientSample sample;
    sample.label = static_cast<int>(rng.next_u64() & 1);
    sample.ebv = random_tensor({cfg.ebv_dim}, rng);
    sample.normal = random_tensor({cfg.normal_dim}, rng);
    for (auto& img : sample.images)
      img = random_tensor({cfg.image_channels, cfg.image_height, cfg.image_width}, rng);
    // One absent image so the absent-prompt path carries gradient too.
    sample = apply_missing(sample, {0, 0, 0, 1, 0});
    const auto pattern = PresencePattern::of_sample(sample);

    auto named = model.parameters();
    std::vector<Tensor> leaves;
    leaves.reserve(named.size());
    for (auto& [name, t] : named) leaves.push_back(t);
    const auto f = [&model, &sample, &pattern](const std::vector<Tensor>&) {
      return bce_loss(model.forward(sample, pattern), sample.label);
    };
    const auto report = grad_check_multi(f, leaves,
                                         {.step = opts.step,
                                          .tol = opts.tol,
                                          .max_coords = opts.max_coords_model,
                                          .coord_seed = opts.seed + point,
                                          .in_place = true});
    entry.points += 1;
    entry.passed = entry.passed && report.passed;
    if (report.max_relative_error > entry.report.max_relative_error) entry.report = report;
  }
  entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return entry;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& opts) {
  opts.model_cfg.validate();
  return {check_dcmc(opts), check_attention(opts), check_cafa(opts), check_model(opts)};
}

// ---- selftest ----

namespace {

using Check = std::pair<bool, std::string>;

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Check check_matmul_oracle(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.next_below(6), k = 1 + rng.next_below(6),
                      n = 1 + rng.next_below(6);
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    const auto expected = oracle::matmul(a.data(), m, k, b.data(), n);
    const Tensor got = matmul(a, b);
    for (std::size_t i = 0; i < expected.size(); ++i)
      worst = std::max(worst, std::fabs(got.at(i) - expected[i]));
  }
  return {worst <= 1e-12, "max |diff| = " + fmt(worst)};
}

Check check_softmax_oracle(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next_below(8);
    const Tensor x = random_tensor({n}, rng, 3.0);
    const auto expected = oracle::softmax_direct(x.data());
    const Tensor got = softmax(x, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::fabs(got.at(i) - expected[i]));
      sum += got.at(i);
    }
    worst = std::max(worst, std::fabs(sum - 1.0));
  }
  return {worst <= 1e-12, "max |diff| = " + fmt(worst)};
}

Check check_norm_oracles(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.next_below(10);
    const Tensor x = random_tensor({n}, rng, 2.0);
    const Tensor gain = random_tensor({n}, rng);
    const Tensor bias = random_tensor({n}, rng);
    const auto expected = oracle::layer_norm_direct(x.data(), gain.data(), bias.data(), 1e-5);
    const Tensor got = layer_norm(x, gain, bias, 1e-5);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(got.at(i) - expected[i]));

    const Tensor image = random_tensor({2, 3, 4}, rng);
    const auto [mu, sd] = instance_stats(image, 1e-5);
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0, var = 0.0;
      oracle::mean_var_two_pass(std::span<const double>(&image.data()[c * 12], 12), mean, var);
      worst = std::max(worst, std::fabs(mu.at(c) - mean));
      worst = std::max(worst, std::fabs(sd.at(c) - std::sqrt(var + 1e-5)));
    }
  }
  return {worst <= 1e-10, "max |diff| = " + fmt(worst)};
}

Check check_rotary_properties(Rng& rng) {
  const auto freqs = RotaryFrequencies::make(8);
  double worst_shift = 0.0, worst_iso = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor q = random_tensor({8}, rng);
    const Tensor k = random_tensor({8}, rng);
    const long s = static_cast<long>(rng.next_below(64));
    const long t = static_cast<long>(rng.next_below(64));
    const long delta = static_cast<long>(rng.next_below(64));
    worst_shift = std::max(worst_shift, std::fabs(rotary_score(q, k, s, t, freqs) -
                                                  rotary_score(q, k, s + delta, t + delta, freqs)));
    const Tensor rotated = apply_rotation(q, t, freqs);
    double nq = 0.0, nr = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      nq += q.at(i) * q.at(i);
      nr += rotated.at(i) * rotated.at(i);
    }
    worst_iso = std::max(worst_iso, std::fabs(std::sqrt(nq) - std::sqrt(nr)));
  }
  return {worst_shift <= 1e-9 && worst_iso <= 1e-12,
          "shift = " + fmt(worst_shift) + ", isometry = " + fmt(worst_iso)};
}

Check check_attention_oracles(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    AttentionParams p = AttentionParams::init(8, 2, rng);
    const auto freqs = RotaryFrequencies::make(4);
    const std::size_t n = 2 + rng.next_below(5);
    const Tensor x = random_tensor({n, 8}, rng);
    std::vector<long> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<long>(rng.next_below(32));
    const Tensor got = scai_attention(x, positions, p, freqs);
    const auto expected =
        oracle::rotary_attention_dense(x.data(), n, 8, positions, p.wq.data(), p.wk.data(),
                                       p.wv.data(), p.wo.data(), 2, freqs.theta);
    for (std::size_t i = 0; i < expected.size(); ++i)
      worst = std::max(worst, std::fabs(got.at(i) - expected[i]));

    const auto zero = RotaryFrequencies::zero_angles(4);
    const Tensor plain = scai_attention(x, positions, p, zero);
    const auto plain_expected = oracle::attention_plain(x.data(), n, 8, p.wq.data(), p.wk.data(),
                                                        p.wv.data(), p.wo.data(), 2);
    for (std::size_t i = 0; i < plain_expected.size(); ++i)
      worst = std::max(worst, std::fabs(plain.at(i) - plain_expected[i]));
  }
  return {worst <= 1e-10, "max |diff| = " + fmt(worst)};
}

Check check_conv_oracle(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({2, 6, 7}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    const std::size_t stride = 1 + rng.next_below(2);
    const Tensor got = conv2d(x, w, b, stride, 1);
    const auto expected =
        oracle::conv2d_direct(x.data(), 2, 6, 7, w.data(), 3, 3, 3, b.data(), stride, 1);
    for (std::size_t i = 0; i < expected.size(); ++i)
      worst = std::max(worst, std::fabs(got.at(i) - expected[i]));
  }
  return {worst <= 1e-10, "max |diff| = " + fmt(worst)};
}

Check check_cafa_oracles(Rng& rng) {
  for (std::size_t n = 1; n <= 25; ++n) {
    if (initial_coordinates(n).coords != oracle::sample_coords_reference(n))
      return {false, "coordinate mismatch at num_param = " + std::to_string(n)};
  }
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    CafaParams p = CafaParams::init(2, 5, 1);
    p.offset_weight = Tensor::param({10, 2, 3, 3}, rng.normal_vector(10 * 2 * 9, 0.2));
    p.offset_bias = Tensor::param({10}, rng.normal_vector(10, 0.3));
    p.depthwise = Tensor::param({2, 5}, rng.normal_vector(10, 0.5));
    const Tensor image = random_tensor({2, 6, 6}, rng);
    const Tensor got = cafa_forward(image, p);
    const auto expected = oracle::deformable_enumerate(
        image.data(), 2, 6, 6, p.offset_weight.data(), p.offset_bias.data(), p.geometry.coords,
        p.depthwise.data(), 1, 6, 6);
    for (std::size_t i = 0; i < expected.size(); ++i)
      worst = std::max(worst, std::fabs(got.at(i) - expected[i]));

    // Zero offsets degenerate to the fixed grid.
    CafaParams fixed = CafaParams::init(2, 5, 1);
    fixed.depthwise = p.depthwise;
    const Tensor got_fixed = cafa_forward(image, fixed);
    const auto expected_fixed = oracle::fixed_grid_conv(image.data(), 2, 6, 6,
                                                        fixed.geometry.coords,
                                                        fixed.depthwise.data(), 1, 6, 6);
    for (std::size_t i = 0; i < expected_fixed.size(); ++i)
      worst = std::max(worst, std::fabs(got_fixed.at(i) - expected_fixed[i]));
  }
  return {worst <= 1e-10, "max |diff| = " + fmt(worst)};
}

Check check_metric_oracles(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_below(29);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Quantized scores so ties actually occur.
      scores[i] = static_cast<double>(rng.next_below(8)) / 8.0;
      labels[i] = static_cast<int>(rng.next_u64() & 1);
    }
    if (trial % 10 == 9)
      for (auto& l : labels) l = 1;  // single-class edge case
    const auto got = evaluate_scores(scores, labels, 0.5);
    const auto expected = oracle::metrics_bruteforce(scores, labels, 0.5);
    const bool auc_match =
        got.auc.has_value() == expected.auc.has_value() &&
        (!got.auc.has_value() || *got.auc == *expected.auc);
    if (got.tp != expected.tp || got.fp != expected.fp || got.tn != expected.tn ||
        got.fn != expected.fn || got.accuracy != expected.accuracy ||
        got.precision != expected.precision || got.recall != expected.recall ||
        got.f1 != expected.f1 || !auc_match)
      return {false, "metric mismatch on trial " + std::to_string(trial)};
  }
  return {true, "100 random score sets match exactly"};
}

Check check_lr_schedule(Rng&) {
  const std::size_t total = 1000;
  const double base = 1e-4;
  const std::size_t warmup = 100;
  if (lr_at(0, total, 0.1, base) != 0.0) return {false, "lr(0) != 0"};
  if (lr_at(warmup, total, 0.1, base) != base) return {false, "lr(warmup) != base"};
  if (lr_at(total, total, 0.1, base) != 0.0) return {false, "lr(total) != 0"};
  // Continuity and piecewise linearity.
  for (std::size_t s = 1; s < total; ++s) {
    const double jump = std::fabs(lr_at(s, total, 0.1, base) - lr_at(s - 1, total, 0.1, base));
    const double max_slope = base / static_cast<double>(std::min(warmup, total - warmup));
    if (jump > max_slope + 1e-18) return {false, "discontinuity at step " + std::to_string(s)};
    if (lr_at(s, total, 0.1, base) > base) return {false, "peak above base"};
  }
  return {true, "warmup and linear decay pinned at 0/base/0"};
}

Check check_auc_routes(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.next_below(6)) / 6.0;
      labels[i] = static_cast<int>(rng.next_u64() & 1);
      (labels[i] == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    const double rank_based = auc_score(scores, labels);
    const auto pairwise = oracle::auc_pairs(scores, labels);
    if (!pairwise || rank_based != *pairwise)
      return {false, "rank-based and pairwise AUC disagree on trial " + std::to_string(trial)};
  }
  return {true, "rank-based AUC equals pairwise enumeration exactly"};
}

}  // namespace

std::vector<SelfTestEntry> run_selftest(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SelfTestEntry> results;
  const auto add = [&](const char* name, Check check) {
    results.push_back({name, check.first, check.second});
  };
  add("matmul vs triple-loop oracle", check_matmul_oracle(rng));
  add("softmax vs direct oracle", check_softmax_oracle(rng));
  add("normalization vs two-pass oracle", check_norm_oracles(rng));
  add("rotary shift invariance and isometry", check_rotary_properties(rng));
  add("attention vs dense rotation oracle", check_attention_oracles(rng));
  add("conv2d vs sliding-window oracle", check_conv_oracle(rng));
  add("cafa vs enumeration oracles", check_cafa_oracles(rng));
  add("metrics vs brute-force oracle", check_metric_oracles(rng));
  add("auc rank route vs pairwise route", check_auc_routes(rng));
  add("lr schedule pins", check_lr_schedule(rng));
  return results;
}

}  // namespace iman
