#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace sucode {

/// Frozen random convolutional pyramid used as the perceptual feature space.
/// Four stride-2 3x3 conv + ReLU stages; weights are a pure function of seed.
class PerceptualExtractorImpl : public torch::nn::Module {
 public:
  static constexpr int kStages = 4;
  static constexpr int kSemanticStage = 2;  // stride 8, matches the latent grid
  static constexpr int64_t kWidths[kStages] = {16, 32, 64, 64};

  explicit PerceptualExtractorImpl(std::uint64_t seed);
  /// Features of every stage for images in [0, 1], [B, 3, H, W].
  std::vector<torch::Tensor> features(const torch::Tensor& x);
  std::vector<double> stage_weights{0.25, 0.25, 0.25, 0.25};

 private:
  torch::nn::ModuleList stages;
};
TORCH_MODULE(PerceptualExtractor);

torch::Tensor pixel_l1(const torch::Tensor& a, const torch::Tensor& b);

/// Stage-weighted sum of per-stage mean absolute feature differences.
torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b, PerceptualExtractor& phi);

struct AdversarialLosses {
  torch::Tensor generator;
  torch::Tensor discriminator;
};
/// Non-saturating objective on raw logits.
AdversarialLosses adversarial_losses(const torch::Tensor& logits_fake, const torch::Tensor& logits_real);

struct VqTerms {
  torch::Tensor codebook;  // mean ||sg[z_hat] - z_sel||^2
  torch::Tensor commit;    // mean ||z_hat - sg[z_sel]||^2
  torch::Tensor semantic;  // mean ||proj(z_q) - sg[phi(x)]||^2
  torch::Tensor total;     // codebook + beta * commit + lambda_s * semantic
};

/// proj_zq is resized bilinearly to the grid of phi_x when they differ.
VqTerms vq_loss(const torch::Tensor& z_hat, const torch::Tensor& z_selected, const torch::Tensor& proj_zq,
                const torch::Tensor& phi_x, double beta, double lambda_s);

/// beta * mean ||z_hat - sg[z_gt]||^2.
torch::Tensor code_loss(const torch::Tensor& z_hat, const torch::Tensor& z_gt, double beta);

/// Scalar losses of one step. Components absent from a stage stay empty.
struct LossComponents {
  std::optional<torch::Tensor> pixel, perceptual, adversarial, vq, code;
  // Breakdown of vq, reported but not summed separately.
  std::optional<torch::Tensor> vq_commit, vq_codebook, vq_semantic;
};

struct LossReport {
  double pixel = 0, perceptual = 0, adversarial = 0, vq_commit = 0, vq_codebook = 0, vq_semantic = 0,
         code = 0, total = 0;
};

struct StageLoss {
  torch::Tensor total;
  LossReport report;
};

/// Stages 1 and 2: pixel + perceptual + lambda_adv * adversarial + vq.
/// Stage 3: pixel + perceptual + lambda_adv * adversarial + code.
/// Throws LossSpecError when a required component is missing.
StageLoss stage_total(int stage, const LossComponents& c, double lambda_adv);

/// Adversarial weight after the linear warm-up over the first `fraction` of steps.
double adversarial_weight(double lambda, std::int64_t step, std::int64_t total_steps, double fraction);

}  // namespace sucode
