#pragma once

// Learnable blocks. Tensors are NCHW inside the networks; a FeatureMap in
// the docs below is one [ch, h, w] slice of such a batch.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "sucode/config.hpp"

namespace sucode {

// ---------------------------------------------------------------------------
// Multiply-add accounting. While a CostScope is alive every conv / linear /
// attention product executed by the blocks below adds its per-sample
// multiply-adds to the scope.
// ---------------------------------------------------------------------------

class CostScope {
 public:
  CostScope();
  ~CostScope();
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;
  std::int64_t mult_adds() const { return mult_adds_; }
  void add(std::int64_t n) { mult_adds_ += n; }
  static CostScope* active();

 private:
  std::int64_t mult_adds_ = 0;
  CostScope* previous_;
};

/// Runs a convolution and records its cost in the active CostScope.
torch::Tensor conv_forward(torch::nn::Conv2d& conv, const torch::Tensor& x);
torch::Tensor linear_forward(torch::nn::Linear& fc, const torch::Tensor& x);

struct BackboneOptions {
  int in_channels = 3;
  int out_channels = 3;
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 4};
  int res_blocks = 2;

  static BackboneOptions encoder(const RunConfig& cfg);
  static BackboneOptions decoder(const RunConfig& cfg);
};

/// Layer-style normalization over channels at each location.
struct LayerNorm2dImpl : torch::nn::Module {
  explicit LayerNorm2dImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight, bias;
};
TORCH_MODULE(LayerNorm2d);

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int64_t in, int64_t out);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Single-head self-attention over all spatial positions.
struct AttnBlockImpl : torch::nn::Module {
  explicit AttnBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d q{nullptr}, k{nullptr}, v{nullptr}, proj{nullptr};
};
TORCH_MODULE(AttnBlock);

/// Gated channel attention: channel-split gating, pooled-conv attention with
/// a logistic squash, a gated MLP, and one residual add.
struct GcamImpl : torch::nn::Module {
  explicit GcamImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  /// Zeroes the final projection so the block is exactly the identity.
  void zero_inner_projection();

  int64_t channels;
  LayerNorm2d norm{nullptr};
  torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, attn{nullptr}, mlp_in{nullptr}, proj{nullptr};
};
TORCH_MODULE(Gcam);

/// Magnitude / phase of the one-sided 2-D spectrum over the spatial axes.
/// Unnormalized forward transform; phase in (-pi, pi].
struct SpectralPair {
  torch::Tensor magnitude;
  torch::Tensor phase;
};
SpectralPair spectral_decompose(const torch::Tensor& f);
/// Inverse with the 1/(h*w) convention, output spatial size (height, width).
torch::Tensor spectral_reconstruct(const SpectralPair& s, int64_t height, int64_t width);

/// Intermediate tensors of one FAFF pass, kept for inspection in tests.
struct FaffTrace {
  torch::Tensor f_in, phase_decomposed, phase_reconstructed, magnitude_mapped, f_freq, f_fus, out;
};

/// Frequency-aware fusion of raw-stream features F_r into the enhancement
/// stream F_e. The phase of the fused input spectrum passes through untouched.
struct FaffImpl : torch::nn::Module {
  explicit FaffImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& f_r, const torch::Tensor& f_e);
  FaffTrace trace(const torch::Tensor& f_r, const torch::Tensor& f_e);

  int64_t channels;
  bool identity_mapper = false;  // bypass g_theta (tests only)
  torch::nn::Conv2d fuse{nullptr};
  LayerNorm2d norm{nullptr};
  torch::nn::Conv2d mapper1{nullptr}, mapper2{nullptr};
  torch::Tensor gamma;  // [1, C, 1, 1], starts at zero
  torch::nn::Conv2d scale{nullptr}, shift{nullptr};
};
TORCH_MODULE(Faff);

/// Width of the perceptual feature stage the semantic term compares against.
inline constexpr int64_t kSemanticWidth = 64;

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const BackboneOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);
  int64_t downsample_factor() const { return int64_t{1} << levels_; }

  /// 1x1 projection of quantized latents onto the perceptual feature space,
  /// trained alongside the encoder. Not part of forward().
  torch::nn::Conv2d semantic_proj{nullptr};

 private:
  int levels_;
  torch::nn::Conv2d conv_in{nullptr};
  torch::nn::ModuleList down;  // per level: res blocks + stride-2 conv
  ResBlock mid1{nullptr}, mid2{nullptr};
  AttnBlock mid_attn{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Encoder);

struct DecodeOutput {
  torch::Tensor image;
  std::vector<torch::Tensor> taps;  // tap i: feature before the i-th upsampling, size (h*2^i, w*2^i)
};

enum class DecoderKind { Plain, Gated, Fused };

/// G_q (Plain), G_r (Gated: a GCAM per scale) and G_e (Fused: a FAFF per scale
/// driven by G_r taps).
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const BackboneOptions& opts, DecoderKind kind, bool faff_all_scales = true);
  torch::Tensor forward(const torch::Tensor& z);
  DecodeOutput forward_with_taps(const torch::Tensor& z);
  torch::Tensor forward_fused(const torch::Tensor& z, const std::vector<torch::Tensor>& raw_taps);

  int levels() const { return levels_; }
  DecoderKind kind() const { return kind_; }
  bool has_faff(int scale) const;
  Gcam gcam(int i) const;
  /// FAFF at scale i; null when that scale has none.
  Faff faff(int scale) const;
  torch::nn::Conv2d& output_conv() { return conv_out; }
  /// Disables every FAFF so the enhancement stream runs on its own.
  bool bypass_faff = false;

 private:
  DecodeOutput run(const torch::Tensor& z, const std::vector<torch::Tensor>* raw_taps);

  int levels_;
  DecoderKind kind_;
  std::vector<int> faff_slot_;  // scale -> index into faffs, -1 when absent
  torch::nn::Conv2d conv_in{nullptr};
  ResBlock mid1{nullptr}, mid2{nullptr};
  AttnBlock mid_attn{nullptr};
  torch::nn::ModuleList up;  // per scale: res blocks
  torch::nn::ModuleList upsample;
  torch::nn::ModuleList gcams;
  torch::nn::ModuleList faffs;
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Decoder);

/// One windowed self-attention layer (pre-norm, relative position bias, MLP)
/// followed by a 1x1 conv to C channels and a softmax over classes.
class WeightPredictorImpl : public torch::nn::Module {
 public:
  WeightPredictorImpl(int64_t embed_dim, int64_t classes, int64_t window, int64_t heads);
  /// [B, C, h, w] weights: nonnegative, summing to 1 over C.
  torch::Tensor forward(const torch::Tensor& z);
  torch::Tensor logits(const torch::Tensor& z);
  static torch::Tensor normalize(const torch::Tensor& logits);
  torch::nn::Conv2d& head() { return out; }

 private:
  int64_t dim_, classes_, window_, heads_;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
  torch::Tensor rel_bias;   // [(2w-1)^2, heads]
  torch::Tensor rel_index;  // [w*w, w*w], buffer
  torch::nn::Conv2d out{nullptr};
};
TORCH_MODULE(WeightPredictor);

/// Patch discriminator: four stride-2 4x4 convs (pad 1) with leaky rectifiers,
/// then a 3x3 stride-1 logit conv. An S x S input yields an S/16 x S/16 grid.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t base_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::ModuleList convs;
  torch::nn::Conv2d logit{nullptr};
};
TORCH_MODULE(Discriminator);

/// Output grid side of the discriminator for a square input.
int64_t discriminator_grid(int64_t input_side);

}  // namespace sucode
