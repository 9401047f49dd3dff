#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sucode/config.hpp"
#include "sucode/image.hpp"

namespace sucode {

/// One learnable codebook per semantic class, stored as [C, N, n_z].
struct CodebookSet {
  torch::Tensor books;
  bool frozen = false;

  std::int64_t classes() const { return books.size(0); }
  std::int64_t entries() const { return books.size(1); }
  std::int64_t dim() const { return books.size(2); }
};

/// Latents are [B, n_z, h, w]; indices and classes are [B, h, w].
struct QuantizationResult {
  torch::Tensor z_q;         // straight-through output: z_hat + sg[z_sel - z_hat]
  torch::Tensor z_selected;  // gathered codebook rows (carries codebook gradients)
  torch::Tensor indices;
  torch::Tensor class_of_location;
  torch::Tensor commit_term;    // mean ||z_hat - sg[z_sel]||^2
  torch::Tensor codebook_term;  // mean ||sg[z_hat] - z_sel||^2
};

struct PerClassQuantization {
  std::vector<torch::Tensor> maps;        // C straight-through maps
  std::vector<torch::Tensor> selected;    // C gathered maps (no straight-through)
  std::vector<torch::Tensor> indices;     // C index maps
};

struct UsageStats {
  torch::Tensor counts;                // int64 [C, N]
  std::vector<double> perplexity_per_class;
  std::int64_t total() const { return counts.sum().item<std::int64_t>(); }
};

/// How many times each quantization route ran; the trainer asserts on these.
struct QuantizerCounters {
  std::atomic<std::int64_t> with_mask{0};
  std::atomic<std::int64_t> per_class{0};
  void reset() {
    with_mask = 0;
    per_class = 0;
  }
};
QuantizerCounters& quantizer_counters();

/// Uniform in [-1/N, 1/N], deterministic in seed.
CodebookSet init_codebooks(const RunConfig& cfg, std::uint64_t seed);

/// argmin_j ||feature - book_j||^2, lowest index on ties.
std::pair<std::int64_t, std::vector<float>> nearest_code(std::span<const float> feature,
                                                         std::span<const float> book, std::int64_t entries);

/// Majority label per factor x factor block, ties to the lowest label.
torch::Tensor downsample_mask(const SemanticMask& mask, int factor);
/// Batched variant over a [B, H, W] int64 tensor.
torch::Tensor downsample_mask_batch(const torch::Tensor& masks, int factor);

/// Each location is quantized against the codebook of its class.
QuantizationResult quantize_with_mask(const torch::Tensor& z_hat, const torch::Tensor& mask_lowres,
                                      const CodebookSet& books);

/// Element c is the whole map quantized against codebook c only.
PerClassQuantization quantize_per_class(const torch::Tensor& z_hat, const CodebookSet& books);

/// sum_c weights[:, c] * maps[c]; weights are [B, C, h, w].
torch::Tensor aggregate_weighted(const std::vector<torch::Tensor>& maps, const torch::Tensor& weights);

UsageStats usage_stats(std::span<const QuantizationResult> results, std::int64_t classes,
                       std::int64_t entries);

}  // namespace sucode
