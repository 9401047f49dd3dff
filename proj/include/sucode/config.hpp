#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sucode {

/// Every knob of a run. Defaults follow the full-scale setup: 8 classes,
/// 256 entries x 256 dims per codebook, 256x256 inputs, batch 4.
struct RunConfig {
  // model
  int class_count = 8;
  int codebook_entries = 256;
  int embed_dim = 256;
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 4};
  int res_blocks = 2;  // per backbone level
  int disc_channels = 64;
  int window_size = 4;
  int attn_heads = 2;
  bool faff_all_scales = true;

  // data
  int image_size = 256;
  int downsample_factor = 8;
  std::map<int, int> class_remap;  // empty = identity

  // training
  int stage = 1;
  int epochs = 200;
  int batch_size = 4;
  double lr_generator = 1e-4;
  double lr_discriminator = 4e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adv_warmup_fraction = 0.1;
  bool freeze_enc_r_stage3 = false;
  std::int64_t max_steps = 0;  // 0 = run all epochs
  std::uint64_t seed = 0;

  // loss weights
  double beta = 0.25;
  double lambda_semantic = 0.1;
  double lambda_adv = 0.1;
  double lambda_adv_stage3 = 0.1;
  std::uint64_t perceptual_seed = 20240611;

  /// Number of stride-2 levels implied by downsample_factor.
  int levels() const;
  int latent_size() const { return image_size / downsample_factor; }

  /// Throws ConfigInvalid naming the offending field.
  void validate() const;
};

/// Reads a YAML document. Missing keys keep their defaults; unknown keys log
/// a warning. Throws ConfigNotFound / ConfigInvalid.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

/// Inverse of parse_config_text; used for checkpoint snapshots.
std::string config_to_yaml(const RunConfig& cfg);

}  // namespace sucode
