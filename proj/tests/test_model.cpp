#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "iman/gradcheck.hpp"
#include "iman/model.hpp"
#include "iman/oracles.hpp"
#include "iman/verification.hpp"
#include "test_util.hpp"

using namespace iman;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.prompt_len = 1;
  cfg.cafa_num_param = 3;
  cfg.stem_channels = 2;
  cfg.patch_size = 4;
  cfg.image_channels = 1;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.ebv_dim = 3;
  cfg.normal_dim = 5;
  cfg.mlp_ratio = 2;
  return cfg;
}

PatientSample tiny_sample(const ModelConfig& cfg, Rng& rng) {
  PatientSample s;
  s.id = 0;
  s.label = 1;
  s.ebv = rand_tensor({cfg.ebv_dim}, rng);
  s.normal = rand_tensor({cfg.normal_dim}, rng);
  for (auto& img : s.images)
    img = rand_tensor({cfg.image_channels, cfg.image_height, cfg.image_width}, rng);
  return s;
}

}  // namespace

TEST_CASE("config validation catches inconsistent settings") {
  ModelConfig cfg = tiny_config();
  cfg.validate();
  cfg.num_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.patch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.prompt_depth = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.d_model = 12;  // head dim 3, odd
  cfg.num_heads = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("tokenize_fields embeds present fields and substitutes the placeholder") {
  Rng rng(500);
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(1));
  PatientSample s = tiny_sample(cfg, rng);

  // Zero field vector with zero bias -> zero token.
  s.ebv = Tensor::zeros({cfg.ebv_dim});
  const Tensor tokens = model.tokenize_fields(s);
  CHECK(tokens.shape() == Shape{2, cfg.d_model});
  for (std::size_t c = 0; c < cfg.d_model; ++c) CHECK(tokens.at({0, c}) == 0.0);

  // Random fields match a direct linear-map oracle.
  s = tiny_sample(cfg, rng);
  const Tensor tokens2 = model.tokenize_fields(s);
  const auto expected =
      oracle::matmul(s.normal.data(), 1, cfg.normal_dim, model.normal_embed_weight.data(),
                     cfg.d_model);
  for (std::size_t c = 0; c < cfg.d_model; ++c)
    CHECK(tokens2.at({1, c}) ==
          doctest::Approx(expected[c] + model.normal_embed_bias.at(c)).epsilon(1e-12));

  // Absent field: the placeholder token, independent of stored values.
  PatientSample masked = s;
  masked.present[0] = false;
  const Tensor t_masked = model.tokenize_fields(masked);
  for (std::size_t c = 0; c < cfg.d_model; ++c)
    CHECK(t_masked.at({0, c}) == model.field_placeholder.at(c));
  masked.ebv = Tensor::full({cfg.ebv_dim}, 1e6);
  const Tensor t_perturbed = model.tokenize_fields(masked);
  CHECK(max_abs_diff(t_masked, t_perturbed) == 0.0);

  // Dimension mismatch is a parameter error.
  PatientSample bad = s;
  bad.ebv = Tensor::zeros({cfg.ebv_dim + 1});
  CHECK_THROWS_AS(model.tokenize_fields(bad), ParamError);
}

TEST_CASE("tokenize_image produces the counted number of patch tokens") {
  Rng rng(501);
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(2));
  const Tensor volume = rand_tensor({1, 8, 8}, rng);
  const Tensor tokens = model.tokenize_image(volume, 0, nullptr);
  CHECK(tokens.shape() == Shape{4, 8});  // (8/4)*(8/4) patches

  ModelConfig bad = cfg;
  bad.patch_size = 5;
  CHECK_THROWS_AS(ImanModel::init(bad, Rng(2)), ConfigError);
}

TEST_CASE("tokenize_image with a zeroed stem yields zero tokens") {
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(3));
  // Zero volume through the zero-initialized offset conv gives zero CAFA
  // output; with zero pointwise/projection biases and zero type embedding
  // every token is zero.
  for (auto& v : model.patch_proj_bias.mutable_data()) v = 0.0;
  for (auto& v : model.pointwise_bias.mutable_data()) v = 0.0;
  for (auto& v : model.modality_embed[1].mutable_data()) v = 0.0;
  const Tensor tokens =
      model.tokenize_image(Tensor::zeros({1, 8, 8}), 1, nullptr);
  for (std::size_t i = 0; i < tokens.numel(); ++i) CHECK(tokens.at(i) == 0.0);
}

TEST_CASE("tokenize_image matches a hand-assembled pipeline oracle") {
  Rng rng(502);
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(4));
  // Give the offset conv nonzero weights so the deformable path is live.
  model.cafa.offset_weight =
      Tensor::param({6, 1, 3, 3}, rng.normal_vector(6 * 9, 0.1));
  const Tensor volume = rand_tensor({1, 8, 8}, rng);

  const Tensor tokens = model.tokenize_image(volume, 2, nullptr);

  // Oracle: deformable stem, pointwise mix, patch flatten, projection.
  const auto stem = oracle::deformable_enumerate(
      volume.data(), 1, 8, 8, model.cafa.offset_weight.data(), model.cafa.offset_bias.data(),
      model.cafa.geometry.coords, model.cafa.depthwise.data(), 1, 8, 8);
  const auto mixed = oracle::conv2d_direct(stem, 1, 8, 8, model.pointwise_weight.data(), 2, 1, 1,
                                           model.pointwise_bias.data(), 1, 0);
  const std::size_t p = 4;
  std::vector<double> patches(4 * 2 * p * p);
  std::size_t pos = 0;
  for (std::size_t pi = 0; pi < 2; ++pi)
    for (std::size_t pj = 0; pj < 2; ++pj)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t u = 0; u < p; ++u)
          for (std::size_t v = 0; v < p; ++v)
            patches[pos++] = mixed[(c * 8 + pi * p + u) * 8 + pj * p + v];
  const auto projected =
      oracle::matmul(patches, 4, 2 * p * p, model.patch_proj_weight.data(), cfg.d_model);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c)
      CHECK(tokens.at({r, c}) == doctest::Approx(projected[r * cfg.d_model + c] +
                                                 model.patch_proj_bias.at(c) +
                                                 model.modality_embed[2].at(c))
                                     .epsilon(1e-10));
}

TEST_CASE("forward is deterministic") {
  Rng rng(503);
  const ModelConfig cfg = tiny_config();
  const ImanModel model = ImanModel::init(cfg, Rng(5));
  const PatientSample s = tiny_sample(cfg, rng);
  const auto pattern = PresencePattern::of_sample(s);
  const double a = model.forward(s, pattern).item();
  const double b = model.forward(s, pattern).item();
  CHECK(a == b);
}

TEST_CASE("forward requires pattern and sample presence to agree") {
  Rng rng(504);
  const ModelConfig cfg = tiny_config();
  const ImanModel model = ImanModel::init(cfg, Rng(6));
  const PatientSample s = tiny_sample(cfg, rng);
  PresencePattern pattern = PresencePattern::of_sample(s);
  pattern.bits[2] = false;
  CHECK_THROWS_AS(model.forward(s, pattern), ParamError);
}

TEST_CASE("forward is invariant to stored values of absent modalities") {
  Rng rng(505);
  const ModelConfig cfg = tiny_config();
  const ImanModel model = ImanModel::init(cfg, Rng(7));
  PatientSample s = tiny_sample(cfg, rng);
  s = apply_missing(s, {1, 0, 1, 0, 0});  // drop ebv and t1
  const auto pattern = PresencePattern::of_sample(s);
  const double base = model.forward(s, pattern).item();

  PatientSample perturbed = s;
  perturbed.ebv = Tensor::full({cfg.ebv_dim}, 123.0);
  perturbed.images[0] = Tensor::full({1, 8, 8}, -55.5);
  CHECK(model.forward(perturbed, pattern).item() == base);

  ModelConfig ablated = cfg;
  ablated.use_prompts = false;
  ablated.zero_fill_ablation = true;
  const ImanModel ablation_model = ImanModel::init(ablated, Rng(7));
  const double ab_base = ablation_model.forward(s, pattern).item();
  CHECK(ablation_model.forward(perturbed, pattern).item() == ab_base);
}

TEST_CASE("swapping image modalities with shared weights and equal prompts is a no-op") {
  Rng rng(506);
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(8));
  // Share everything that distinguishes t1 from t2.
  model.modality_embed[2].mutable_data() = model.modality_embed[0].data();
  const auto shared_block = model.prompts.present_blocks[2].data();
  model.prompts.present_blocks[4].mutable_data() = shared_block;
  model.prompts.absent_blocks[2].mutable_data() = shared_block;
  model.prompts.absent_blocks[4].mutable_data() = shared_block;

  // t1c and t2 absent: exactly one image block in the sequence, so the swap
  // cannot reorder tokens.
  PatientSample a = tiny_sample(cfg, rng);
  a = apply_missing(a, {0, 0, 0, 1, 1});

  PatientSample b = a;
  b.images[2] = a.images[0];
  b.images[0] = Tensor::zeros({1, 8, 8});
  b.present[2] = false;
  b.present[4] = true;

  const double logit_a = model.forward(a, PresencePattern::of_sample(a)).item();
  const double logit_b = model.forward(b, PresencePattern::of_sample(b)).item();
  CHECK(logit_a == logit_b);
}

TEST_CASE("sequence length follows the documented construction for every pattern") {
  const ModelConfig cfg = tiny_config();
  const ImanModel model = ImanModel::init(cfg, Rng(9));
  Rng rng(507);
  const PatientSample base = tiny_sample(cfg, rng);
  // All 31 patterns with at least one present modality; forward itself
  // asserts the assembled length against sequence_length().
  for (unsigned mask = 1; mask < 32; ++mask) {
    std::array<std::uint8_t, 5> absent{};
    for (std::size_t k = 0; k < 5; ++k) absent[k] = (mask & (1u << k)) ? 0 : 1;
    const PatientSample s = apply_missing(base, absent);
    const auto pattern = PresencePattern::of_sample(s);
    std::size_t expected = 5 * cfg.prompt_len + 2;
    for (std::size_t m = 0; m < 3; ++m)
      if (pattern.bits[2 + m]) expected += cfg.patches_per_image();
    CHECK(cfg.sequence_length(pattern) == expected);
    CHECK(std::isfinite(model.forward(s, pattern).item()));
  }
}

TEST_CASE("bce_loss matches its closed forms") {
  CHECK(bce_loss(Tensor::scalar(0.0), 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_loss(Tensor::scalar(0.0), 1).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_loss(Tensor::scalar(50.0), 1).item() <= 1e-20);
  CHECK(bce_loss(Tensor::scalar(1.0), 0).item() ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(bce_loss(Tensor::scalar(1.0), 0).item() == doctest::Approx(1.313262).epsilon(1e-6));
  CHECK_THROWS_AS(bce_loss(Tensor::scalar(0.0), 2), ParamError);
}

TEST_CASE("forward matches a straight-line composition of the module operations") {
  Rng rng(508);
  ModelConfig cfg = tiny_config();
  cfg.num_layers = 1;
  const ImanModel m = ImanModel::init(cfg, Rng(10));
  PatientSample s = tiny_sample(cfg, rng);
  s = apply_missing(s, {0, 0, 0, 1, 0});  // t1c absent
  const auto pattern = PresencePattern::of_sample(s);

  const double logit = m.forward(s, pattern).item();

  // Straight-line re-assembly from the public module operations.
  NoGradGuard no_grad;
  const Tensor fields = m.tokenize_fields(s);
  const Tensor calibration = mean_axis(fields, 0);
  std::vector<Tensor> parts;
  parts.push_back(select_prompts(pattern, m.prompts));
  parts.push_back(fields);
  parts.push_back(m.tokenize_image(s.images[0], 0, &calibration));
  parts.push_back(m.tokenize_image(s.images[2], 2, &calibration));
  Tensor x = concat_rows(parts);
  std::vector<long> positions(x.dim(0));
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<long>(i);
  const auto& layer = m.layers[0];
  x = add(x, scai_attention(layer_norm(x, layer.ln1_gain, layer.ln1_bias, 1e-5), positions,
                            layer.attn, m.freqs));
  const Tensor normed = layer_norm(x, layer.ln2_gain, layer.ln2_bias, 1e-5);
  x = add(x, add_rowvec(matmul(gelu(add_rowvec(matmul(normed, layer.ff1_weight), layer.ff1_bias)),
                               layer.ff2_weight),
                        layer.ff2_bias));
  x = layer_norm(x, m.final_gain, m.final_bias, 1e-5);
  const Tensor pooled = reshape(mean_axis(x, 0), {1, cfg.d_model});
  const double expected = add_rowvec(matmul(pooled, m.head_weight), m.head_bias).item();

  CHECK(std::fabs(logit - expected) <= 1e-9);
}

TEST_CASE("end-to-end loss passes grad_check for every parameter group at a tiny config") {
  Rng rng(509);
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(11));
  PatientSample s = tiny_sample(cfg, rng);
  s = apply_missing(s, {0, 0, 0, 1, 0});  // one absent image so prompts engage
  const auto pattern = PresencePattern::of_sample(s);

  auto params = model.parameters();
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (auto& [name, t] : params) leaves.push_back(t);

  const auto f = [&](const std::vector<Tensor>&) {
    return bce_loss(model.forward(s, pattern), s.label);
  };
  for (std::uint64_t point = 0; point < 3; ++point) {
    // Generic random point: bilinear sampling and the DCMC rectifier are
    // only piecewise smooth, so certification avoids their kink sets.
    Rng reinit(6000 + point);
    randomize_for_gradcheck(model, reinit);
    const auto report =
        grad_check_multi(f, leaves, {.step = 1e-4, .tol = 1e-4, .in_place = true});
    INFO("point ", point, " max_rel=", report.max_relative_error, " worst=", report.worst_index);
    CHECK(report.passed);
  }
}

TEST_CASE("checkpoints round-trip byte-exactly") {
  namespace fs = std::filesystem;
  const ModelConfig cfg = tiny_config();
  ImanModel model = ImanModel::init(cfg, Rng(12));
  const auto dir = fs::temp_directory_path() / "iman_ckpt_test";
  fs::create_directories(dir);
  const std::string path_a = (dir / "a.ckpt").string();
  const std::string path_b = (dir / "b.ckpt").string();

  save_checkpoint(path_a, model);
  ImanModel loaded = load_checkpoint(path_a);
  save_checkpoint(path_b, loaded);

  std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(!bytes_a.empty());

  // Loaded model computes the same logits.
  Rng rng(510);
  const PatientSample s = tiny_sample(cfg, rng);
  const auto pattern = PresencePattern::of_sample(s);
  CHECK(model.forward(s, pattern).item() == loaded.forward(s, pattern).item());

  CHECK(model.parameter_count() == loaded.parameter_count());
  CHECK(model.parameter_count() > 0);
  fs::remove_all(dir);
}

TEST_CASE("cls pooling uses the class token row") {
  ModelConfig cfg = tiny_config();
  cfg.pooling = Pooling::Cls;
  const ImanModel model = ImanModel::init(cfg, Rng(13));
  Rng rng(511);
  const PatientSample s = tiny_sample(cfg, rng);
  const auto pattern = PresencePattern::of_sample(s);
  CHECK(cfg.sequence_length(pattern) == 1 + 5 * cfg.prompt_len + 2 + 3 * cfg.patches_per_image());
  CHECK(std::isfinite(model.forward(s, pattern).item()));
}
