#include "iman/model.hpp"

#include <charconv>
#include <cmath>

namespace iman {

void ModelConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || num_layers == 0)
    throw ConfigError("d_model, num_heads, and num_layers must be positive");
  if (d_model % num_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  if ((d_model / num_heads) % 2 != 0)
    throw ConfigError("per-head dim " + std::to_string(d_model / num_heads) + " must be even");
  if (prompt_len == 0) throw ConfigError("prompt_len must be positive");
  if (prompt_depth != 1)
    throw ConfigError("prompt_depth " + std::to_string(prompt_depth) +
                      " unsupported: the prompt bank holds one block pair per modality, which "
                      "fixes attachment to the input layer");
  if (cafa_num_param == 0 || cafa_stride == 0) throw ConfigError("cafa settings must be positive");
  if (stem_channels == 0) throw ConfigError("stem_channels must be positive");
  if (ebv_dim == 0 || normal_dim == 0) throw ConfigError("field dims must be positive");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (image_channels == 0 || image_height == 0 || image_width == 0)
    throw ConfigError("image shape must be positive");
  if (patch_size == 0 || stem_height() % patch_size != 0 || stem_width() % patch_size != 0)
    throw ConfigError("stem output " + std::to_string(stem_height()) + "x" +
                      std::to_string(stem_width()) + " not divisible by patch size " +
                      std::to_string(patch_size));
  if (rotary_base <= 0.0) throw ConfigError("rotary_base must be positive");
  if (dcmc_eps <= 0.0) throw ConfigError("dcmc_eps must be positive");
}

std::size_t ModelConfig::sequence_length(const PresencePattern& pattern) const {
  std::size_t n = (pooling == Pooling::Cls ? 1 : 0) +
                  (use_prompts ? kNumModalities * prompt_len : 0) + kNumFieldModalities;
  for (std::size_t m = 0; m < kNumImageModalities; ++m) {
    if (zero_fill_ablation || pattern.bits[kNumFieldModalities + m]) n += patches_per_image();
  }
  return n;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_size(std::size_t v) { return std::to_string(v); }

}  // namespace

std::map<std::string, std::string> ModelConfig::kv() const {
  return {
      {"cafa_num_param", fmt_size(cafa_num_param)},
      {"cafa_stride", fmt_size(cafa_stride)},
      {"d_model", fmt_size(d_model)},
      {"dcmc_eps", fmt_double(dcmc_eps)},
      {"ebv_dim", fmt_size(ebv_dim)},
      {"image_channels", fmt_size(image_channels)},
      {"image_height", fmt_size(image_height)},
      {"image_width", fmt_size(image_width)},
      {"mlp_ratio", fmt_size(mlp_ratio)},
      {"normal_dim", fmt_size(normal_dim)},
      {"num_heads", fmt_size(num_heads)},
      {"num_layers", fmt_size(num_layers)},
      {"patch_size", fmt_size(patch_size)},
      {"pooling", pooling == Pooling::Mean ? "mean" : "cls"},
      {"prompt_depth", fmt_size(prompt_depth)},
      {"prompt_len", fmt_size(prompt_len)},
      {"rotary_base", fmt_double(rotary_base)},
      {"stem_channels", fmt_size(stem_channels)},
      {"use_prompts", use_prompts ? "true" : "false"},
      {"zero_fill_ablation", zero_fill_ablation ? "true" : "false"},
  };
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  const auto parse_size = [&](std::size_t& out) {
    const long long v = std::stoll(value);
    if (v < 0) throw ConfigError(key + " must be nonnegative, got " + value);
    out = static_cast<std::size_t>(v);
  };
  const auto parse_bool = [&](bool& out) {
    if (value == "true" || value == "1")
      out = true;
    else if (value == "false" || value == "0")
      out = false;
    else
      throw ConfigError(key + " expects true/false, got " + value);
  };
  if (key == "d_model") parse_size(d_model);
  else if (key == "num_heads") parse_size(num_heads);
  else if (key == "num_layers") parse_size(num_layers);
  else if (key == "prompt_len") parse_size(prompt_len);
  else if (key == "prompt_depth") parse_size(prompt_depth);
  else if (key == "cafa_num_param") parse_size(cafa_num_param);
  else if (key == "cafa_stride") parse_size(cafa_stride);
  else if (key == "stem_channels") parse_size(stem_channels);
  else if (key == "patch_size") parse_size(patch_size);
  else if (key == "image_channels") parse_size(image_channels);
  else if (key == "image_height") parse_size(image_height);
  else if (key == "image_width") parse_size(image_width);
  else if (key == "ebv_dim") parse_size(ebv_dim);
  else if (key == "normal_dim") parse_size(normal_dim);
  else if (key == "mlp_ratio") parse_size(mlp_ratio);
  else if (key == "rotary_base") rotary_base = std::stod(value);
  else if (key == "dcmc_eps") dcmc_eps = std::stod(value);
  else if (key == "use_prompts") parse_bool(use_prompts);
  else if (key == "zero_fill_ablation") parse_bool(zero_fill_ablation);
  else if (key == "pooling") {
    if (value == "mean") pooling = Pooling::Mean;
    else if (value == "cls") pooling = Pooling::Cls;
    else throw ConfigError("pooling expects mean or cls, got " + value);
  } else {
    return false;
  }
  return true;
}

ImanModel ImanModel::init(const ModelConfig& cfg, Rng rng) {
  cfg.validate();
  ImanModel m;
  m.cfg = cfg;
  m.freqs = RotaryFrequencies::make(cfg.head_dim(), cfg.rotary_base);
  const double s = 0.02;
  const std::size_t d = cfg.d_model;

  m.ebv_embed_weight = Tensor::param({cfg.ebv_dim, d}, rng.trunc_normal_vector(cfg.ebv_dim * d, s));
  m.ebv_embed_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
  m.normal_embed_weight =
      Tensor::param({cfg.normal_dim, d}, rng.trunc_normal_vector(cfg.normal_dim * d, s));
  m.normal_embed_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
  m.field_placeholder = Tensor::param({d}, rng.trunc_normal_vector(d, s));

  m.cafa = CafaParams::init(cfg.image_channels, cfg.cafa_num_param, cfg.cafa_stride);
  m.pointwise_weight =
      Tensor::param({cfg.stem_channels, cfg.image_channels, 1, 1},
                    rng.trunc_normal_vector(cfg.stem_channels * cfg.image_channels, s));
  m.pointwise_bias = Tensor::param({cfg.stem_channels}, std::vector<double>(cfg.stem_channels, 0.0));
  m.dcmc = DcmcParams::init(d, cfg.stem_channels, rng, cfg.dcmc_eps);

  const std::size_t patch_dim = cfg.stem_channels * cfg.patch_size * cfg.patch_size;
  m.patch_proj_weight = Tensor::param({patch_dim, d}, rng.trunc_normal_vector(patch_dim * d, s));
  m.patch_proj_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
  for (auto& e : m.modality_embed) e = Tensor::param({d}, rng.trunc_normal_vector(d, s));

  m.prompts = PromptBank::init(cfg.prompt_len, d, rng);

  m.layers.reserve(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    TransformerLayer layer;
    layer.ln1_gain = Tensor::param({d}, std::vector<double>(d, 1.0));
    layer.ln1_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
    layer.attn = AttentionParams::init(d, cfg.num_heads, rng);
    layer.ln2_gain = Tensor::param({d}, std::vector<double>(d, 1.0));
    layer.ln2_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
    const std::size_t hidden = cfg.mlp_ratio * d;
    layer.ff1_weight = Tensor::param({d, hidden}, rng.trunc_normal_vector(d * hidden, s));
    layer.ff1_bias = Tensor::param({hidden}, std::vector<double>(hidden, 0.0));
    layer.ff2_weight = Tensor::param({hidden, d}, rng.trunc_normal_vector(hidden * d, s));
    layer.ff2_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
    m.layers.push_back(std::move(layer));
  }

  m.final_gain = Tensor::param({d}, std::vector<double>(d, 1.0));
  m.final_bias = Tensor::param({d}, std::vector<double>(d, 0.0));
  m.cls_token = Tensor::param({d}, rng.trunc_normal_vector(d, s));
  m.head_weight = Tensor::param({d, 1}, rng.trunc_normal_vector(d, s));
  m.head_bias = Tensor::param({1}, {0.0});
  return m;
}

std::vector<std::pair<std::string, Tensor>> ImanModel::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("field.ebv.weight", ebv_embed_weight);
  out.emplace_back("field.ebv.bias", ebv_embed_bias);
  out.emplace_back("field.normal.weight", normal_embed_weight);
  out.emplace_back("field.normal.bias", normal_embed_bias);
  out.emplace_back("field.placeholder", field_placeholder);
  out.emplace_back("cafa.offset.weight", cafa.offset_weight);
  out.emplace_back("cafa.offset.bias", cafa.offset_bias);
  out.emplace_back("cafa.depthwise", cafa.depthwise);
  out.emplace_back("stem.pointwise.weight", pointwise_weight);
  out.emplace_back("stem.pointwise.bias", pointwise_bias);
  out.emplace_back("dcmc.sigma.w1", dcmc.sigma_w1);
  out.emplace_back("dcmc.sigma.b1", dcmc.sigma_b1);
  out.emplace_back("dcmc.sigma.w2", dcmc.sigma_w2);
  out.emplace_back("dcmc.sigma.b2", dcmc.sigma_b2);
  out.emplace_back("dcmc.gamma.w1", dcmc.gamma_w1);
  out.emplace_back("dcmc.gamma.b1", dcmc.gamma_b1);
  out.emplace_back("dcmc.gamma.w2", dcmc.gamma_w2);
  out.emplace_back("dcmc.gamma.b2", dcmc.gamma_b2);
  out.emplace_back("stem.patch_proj.weight", patch_proj_weight);
  out.emplace_back("stem.patch_proj.bias", patch_proj_bias);
  for (std::size_t i = 0; i < kNumImageModalities; ++i)
    out.emplace_back(std::string("stem.modality_embed.") + kModalityNames[kNumFieldModalities + i],
                     modality_embed[i]);
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    out.emplace_back(std::string("prompt.") + kModalityNames[k] + ".present",
                     prompts.present_blocks[k]);
    out.emplace_back(std::string("prompt.") + kModalityNames[k] + ".absent",
                     prompts.absent_blocks[k]);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1.gain", layers[l].ln1_gain);
    out.emplace_back(prefix + "ln1.bias", layers[l].ln1_bias);
    out.emplace_back(prefix + "attn.wq", layers[l].attn.wq);
    out.emplace_back(prefix + "attn.wk", layers[l].attn.wk);
    out.emplace_back(prefix + "attn.wv", layers[l].attn.wv);
    out.emplace_back(prefix + "attn.wo", layers[l].attn.wo);
    out.emplace_back(prefix + "ln2.gain", layers[l].ln2_gain);
    out.emplace_back(prefix + "ln2.bias", layers[l].ln2_bias);
    out.emplace_back(prefix + "ff1.weight", layers[l].ff1_weight);
    out.emplace_back(prefix + "ff1.bias", layers[l].ff1_bias);
    out.emplace_back(prefix + "ff2.weight", layers[l].ff2_weight);
    out.emplace_back(prefix + "ff2.bias", layers[l].ff2_bias);
  }
  out.emplace_back("final_norm.gain", final_gain);
  out.emplace_back("final_norm.bias", final_bias);
  out.emplace_back("cls_token", cls_token);
  out.emplace_back("head.weight", head_weight);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::size_t ImanModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

void ImanModel::zero_grad() const {
  for (auto& [name, t] : parameters()) const_cast<Tensor&>(t).zero_grad();
}

bool ImanModel::parameters_finite() const {
  for (const auto& [name, t] : parameters())
    if (!t.all_finite()) return false;
  return true;
}

Tensor patchify(const Tensor& features, std::size_t patch) {
  if (features.ndim() != 3) throw ShapeError("patchify expects [C,H,W]");
  const std::size_t C = features.dim(0), H = features.dim(1), W = features.dim(2);
  if (patch == 0 || H % patch != 0 || W % patch != 0)
    throw ConfigError("feature map " + shape_str(features.shape()) +
                      " not divisible by patch size " + std::to_string(patch));
  const std::size_t rows = H / patch, cols = W / patch;
  const std::size_t n_patches = rows * cols, patch_dim = C * patch * patch;
  const auto& fv = features.data();

  // Flat gather indices, reused by the backward scatter.
  auto indices = std::make_shared<std::vector<std::size_t>>(n_patches * patch_dim);
  std::vector<double> y(n_patches * patch_dim);
  std::size_t pos = 0;
  for (std::size_t pi = 0; pi < rows; ++pi)
    for (std::size_t pj = 0; pj < cols; ++pj)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t u = 0; u < patch; ++u)
          for (std::size_t v = 0; v < patch; ++v) {
            const std::size_t src = (c * H + pi * patch + u) * W + pj * patch + v;
            (*indices)[pos] = src;
            y[pos] = fv[src];
            ++pos;
          }
  return detail::make_node({n_patches, patch_dim}, std::move(y), {features},
                           [features, indices](const Tensor& out) {
                             if (!features.requires_grad()) return;
                             auto& gf = features.grad_buffer();
                             const auto& g = out.grad();
                             for (std::size_t i = 0; i < g.size(); ++i) gf[(*indices)[i]] += g[i];
                           });
}

Tensor ImanModel::tokenize_fields(const PatientSample& sample) const {
  std::vector<Tensor> rows;
  rows.reserve(kNumFieldModalities);
  const auto embed_field = [&](const Tensor& values, const Tensor& weight, const Tensor& bias,
                               std::size_t expected_dim) {
    if (values.numel() != expected_dim)
      throw ParamError("field vector length " + std::to_string(values.numel()) +
                       " does not match embedder input dim " + std::to_string(expected_dim));
    return add_rowvec(matmul(reshape(values, {1, expected_dim}), weight),
                      bias);
  };
  for (std::size_t k = 0; k < kNumFieldModalities; ++k) {
    const Tensor& weight = k == 0 ? ebv_embed_weight : normal_embed_weight;
    const Tensor& bias = k == 0 ? ebv_embed_bias : normal_embed_bias;
    const std::size_t dim = k == 0 ? cfg.ebv_dim : cfg.normal_dim;
    if (sample.present[k]) {
      rows.push_back(embed_field(sample.modality(k), weight, bias, dim));
    } else if (cfg.zero_fill_ablation) {
      // Naive imputation: embed an explicit zero vector (never the stored
      // values, which keeps the logit independent of masked slots).
      rows.push_back(embed_field(Tensor::zeros({dim}), weight, bias, dim));
    } else {
      rows.push_back(reshape(field_placeholder, {1, cfg.d_model}));
    }
  }
  return concat_rows(rows);
}

Tensor ImanModel::tokenize_image(const Tensor& volume, std::size_t image_index,
                                 const Tensor* calibration_field) const {
  if (image_index >= kNumImageModalities)
    throw ParamError("image modality index out of range");
  if (volume.ndim() != 3 || volume.dim(0) != cfg.image_channels ||
      volume.dim(1) != cfg.image_height || volume.dim(2) != cfg.image_width)
    throw ShapeError("image volume " + shape_str(volume.shape()) + " does not match config");
  Tensor features = conv2d(cafa_forward(volume, cafa), pointwise_weight, pointwise_bias, 1, 0);
  if (calibration_field != nullptr) features = dcmc_forward(features, *calibration_field, dcmc);
  const Tensor tokens =
      add_rowvec(matmul(patchify(features, cfg.patch_size), patch_proj_weight), patch_proj_bias);
  return add_rowvec(tokens, modality_embed[image_index]);
}

Tensor ImanModel::forward(const PatientSample& sample, const PresencePattern& pattern) const {
  for (std::size_t k = 0; k < kNumModalities; ++k)
    if (pattern.bits[k] != sample.present[k])
      throw ParamError(std::string("sample presence does not match pattern for modality ") +
                       kModalityNames[k]);

  const Tensor field_tokens = tokenize_fields(sample);
  const Tensor calibration = mean_axis(field_tokens, 0);

  std::vector<Tensor> parts;
  if (cfg.pooling == Pooling::Cls) parts.push_back(reshape(cls_token, {1, cfg.d_model}));
  if (cfg.use_prompts) parts.push_back(select_prompts(pattern, prompts));
  parts.push_back(field_tokens);
  for (std::size_t m = 0; m < kNumImageModalities; ++m) {
    const bool present = pattern.bits[kNumFieldModalities + m];
    if (present) {
      parts.push_back(tokenize_image(sample.images[m], m, &calibration));
    } else if (cfg.zero_fill_ablation) {
      parts.push_back(tokenize_image(
          Tensor::zeros({cfg.image_channels, cfg.image_height, cfg.image_width}), m,
          &calibration));
    }
  }

  Tensor x = concat_rows(parts);
  const std::size_t n = x.dim(0);
  if (n != cfg.sequence_length(pattern))
    throw Error("internal: assembled sequence length " + std::to_string(n) +
                " does not match the documented construction " +
                std::to_string(cfg.sequence_length(pattern)));
  std::vector<long> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<long>(i);

  for (const auto& layer : layers) {
    const Tensor attended = scai_attention(layer_norm(x, layer.ln1_gain, layer.ln1_bias, 1e-5),
                                           positions, layer.attn, freqs);
    x = add(x, attended);
    const Tensor normed = layer_norm(x, layer.ln2_gain, layer.ln2_bias, 1e-5);
    const Tensor hidden = gelu(add_rowvec(matmul(normed, layer.ff1_weight), layer.ff1_bias));
    x = add(x, add_rowvec(matmul(hidden, layer.ff2_weight), layer.ff2_bias));
  }
  x = layer_norm(x, final_gain, final_bias, 1e-5);

  Tensor pooled;
  if (cfg.pooling == Pooling::Cls) {
    pooled = slice_rows(x, 0, 1);
  } else {
    pooled = reshape(mean_axis(x, 0), {1, cfg.d_model});
  }
  const Tensor logit = add_rowvec(matmul(pooled, head_weight), head_bias);
  return reshape(logit, {1});
}

Tensor bce_loss(const Tensor& logit, int label) {
  if (logit.numel() != 1) throw ShapeError("bce_loss expects a single logit");
  if (label != 0 && label != 1) throw ParamError("bce_loss label must be 0 or 1");
  const double sign = label == 1 ? 1.0 : -1.0;
  return softplus(scale(logit, -sign));
}

}  // namespace iman
