#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "iman/cafa.hpp"
#include "iman/dataset.hpp"
#include "iman/dcmc.hpp"
#include "iman/missingness.hpp"
#include "iman/rng.hpp"
#include "iman/scai.hpp"
#include "iman/tensor.hpp"

namespace iman {

enum class Pooling { Mean, Cls };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t prompt_len = 2;
  std::size_t prompt_depth = 1;  // input-only attachment; 1 is the only depth
  std::size_t cafa_num_param = 5;
  std::size_t cafa_stride = 1;
  std::size_t stem_channels = 4;
  std::size_t patch_size = 8;
  std::size_t image_channels = 1;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t ebv_dim = 4;
  std::size_t normal_dim = 19;
  std::size_t mlp_ratio = 2;
  Pooling pooling = Pooling::Mean;
  bool use_prompts = true;
  // Ablation: no prompt tokens, absent modalities tokenized as zeros.
  bool zero_fill_ablation = false;
  double rotary_base = 10000.0;
  double dcmc_eps = 1e-5;

  void validate() const;
  std::size_t head_dim() const { return d_model / num_heads; }
  std::size_t stem_height() const { return (image_height - 1) / cafa_stride + 1; }
  std::size_t stem_width() const { return (image_width - 1) / cafa_stride + 1; }
  std::size_t patches_per_image() const {
    return (stem_height() / patch_size) * (stem_width() / patch_size);
  }
  std::size_t sequence_length(const PresencePattern& pattern) const;

  // Canonical key/value form used by checkpoints and the config system.
  std::map<std::string, std::string> kv() const;
  bool set(const std::string& key, const std::string& value);
};

struct TransformerLayer {
  Tensor ln1_gain, ln1_bias;
  AttentionParams attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ff1_weight, ff1_bias, ff2_weight, ff2_bias;
};

// Field embedders, CAFA image stem with DCMC calibration, presence-aware
// prompt tokens, rotary-attention transformer stack, pooled binary head.
struct ImanModel {
  ModelConfig cfg;
  RotaryFrequencies freqs;

  Tensor ebv_embed_weight, ebv_embed_bias;
  Tensor normal_embed_weight, normal_embed_bias;
  Tensor field_placeholder;  // shared token for absent fields

  CafaParams cafa;
  Tensor pointwise_weight, pointwise_bias;  // 1x1 channel mixing after CAFA
  DcmcParams dcmc;
  Tensor patch_proj_weight, patch_proj_bias;
  std::array<Tensor, kNumImageModalities> modality_embed;

  PromptBank prompts;
  std::vector<TransformerLayer> layers;
  Tensor final_gain, final_bias;
  Tensor cls_token;
  Tensor head_weight, head_bias;

  static ImanModel init(const ModelConfig& cfg, Rng rng);

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
  bool parameters_finite() const;

  // One token per field modality, fixed order (ebv, normal); absent fields
  // map to the shared placeholder.
  Tensor tokenize_fields(const PatientSample& sample) const;

  // CAFA stem -> optional DCMC calibration -> non-overlapping patches ->
  // linear projection (+ per-modality type embedding).
  Tensor tokenize_image(const Tensor& volume, std::size_t image_index,
                        const Tensor* calibration_field) const;

  // Full pass to a single logit. The sample must be masked consistently
  // with the pattern.
  Tensor forward(const PatientSample& sample, const PresencePattern& pattern) const;
};

// Numerically stable binary cross entropy on a logit:
// log(1 + exp(-(2*label - 1) * logit)).
Tensor bce_loss(const Tensor& logit, int label);

// Non-overlapping patch flattening: [C,H,W] -> [(H/p)*(W/p), C*p*p],
// patches in row-major order.
Tensor patchify(const Tensor& features, std::size_t patch);

// Checkpoint: "IMAN 1" header, key-sorted config text, then named parameter
// blocks of little-endian 64-bit reals. Byte-exact round-trip.
void save_checkpoint(const std::string& path, const ImanModel& model);
ImanModel load_checkpoint(const std::string& path);

}  // namespace iman
