#include "sucode/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <string>

#include "sucode/errors.hpp"
#include "sucode/networks.hpp"

namespace sucode {

namespace F = torch::nn::functional;

static_assert(PerceptualExtractorImpl::kWidths[PerceptualExtractorImpl::kSemanticStage] == kSemanticWidth);

PerceptualExtractorImpl::PerceptualExtractorImpl(std::uint64_t seed) {
  stages = register_module("stages", torch::nn::ModuleList());
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = 3;
  torch::NoGradGuard ng;
  for (int s = 0; s < kStages; ++s) {
    torch::nn::Conv2d c(torch::nn::Conv2dOptions(in, kWidths[s], 3).stride(2).padding(1));
    // He-normal weights from a private generator; global RNG is untouched.
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    c->weight.copy_(at::normal(0.0, std, c->weight.sizes(), gen));
    c->bias.zero_();
    stages->push_back(c);
    in = kWidths[s];
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualExtractorImpl::features(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x * 2.0 - 1.0;
  for (std::size_t s = 0; s < stages->size(); ++s) {
    auto c = torch::nn::Conv2d(stages->ptr<torch::nn::Conv2dImpl>(s));
    h = torch::relu(c->forward(h));
    out.push_back(h);
  }
  return out;
}

namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": operands differ in shape");
}

}  // namespace

torch::Tensor pixel_l1(const torch::Tensor& a, const torch::Tensor& b) {
  same_shape(a, b, "pixel_l1");
  return (a - b).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& a, const torch::Tensor& b, PerceptualExtractor& phi) {
  same_shape(a, b, "perceptual_loss");
  auto fa = phi->features(a);
  auto fb = phi->features(b);
  torch::Tensor total = torch::zeros({}, a.options());
  for (std::size_t s = 0; s < fa.size(); ++s) total = total + phi->stage_weights[s] * (fa[s] - fb[s]).abs().mean();
  return total;
}

AdversarialLosses adversarial_losses(const torch::Tensor& logits_fake, const torch::Tensor& logits_real) {
  same_shape(logits_fake, logits_real, "adversarial_losses");
  return {F::softplus(-logits_fake).mean(), F::softplus(-logits_real).mean() + F::softplus(logits_fake).mean()};
}

VqTerms vq_loss(const torch::Tensor& z_hat, const torch::Tensor& z_selected, const torch::Tensor& proj_zq,
                const torch::Tensor& phi_x, double beta, double lambda_s) {
  same_shape(z_hat, z_selected, "vq_loss");
  VqTerms t;
  t.codebook = (z_hat.detach() - z_selected).pow(2).mean();
  t.commit = (z_hat - z_selected.detach()).pow(2).mean();
  auto proj = proj_zq;
  if (proj.size(2) != phi_x.size(2) || proj.size(3) != phi_x.size(3))
    proj = F::interpolate(proj, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{phi_x.size(2), phi_x.size(3)})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
  if (proj.size(1) != phi_x.size(1)) throw ShapeError("semantic projection width differs from feature width");
  t.semantic = (proj - phi_x.detach()).pow(2).mean();
  t.total = t.codebook + beta * t.commit + lambda_s * t.semantic;
  return t;
}

torch::Tensor code_loss(const torch::Tensor& z_hat, const torch::Tensor& z_gt, double beta) {
  same_shape(z_hat, z_gt, "code_loss");
  return beta * (z_hat - z_gt.detach()).pow(2).mean();
}

StageLoss stage_total(int stage, const LossComponents& c, double lambda_adv) {
  if (stage < 1 || stage > 3) throw LossSpecError("unknown stage " + std::to_string(stage));
  auto need = [](const std::optional<torch::Tensor>& t, const char* name) -> const torch::Tensor& {
    if (!t || !t->defined()) throw LossSpecError(std::string("missing component: ") + name);
    return *t;
  };
  auto value = [](const std::optional<torch::Tensor>& t) {
    return t && t->defined() ? t->detach().item<double>() : 0.0;
  };
  const auto& pixel = need(c.pixel, "pixel");
  const auto& per = need(c.perceptual, "perceptual");
  const auto& adv = need(c.adversarial, "adversarial");
  StageLoss out;
  if (stage == 3) {
    out.total = pixel + per + lambda_adv * adv + need(c.code, "code");
  } else {
    out.total = pixel + per + lambda_adv * adv + need(c.vq, "vq");
  }
  auto& r = out.report;
  r.pixel = value(c.pixel);
  r.perceptual = value(c.perceptual);
  r.adversarial = value(c.adversarial);
  r.vq_commit = value(c.vq_commit);
  r.vq_codebook = value(c.vq_codebook);
  r.vq_semantic = value(c.vq_semantic);
  r.code = value(c.code);
  r.total = out.total.detach().item<double>();
  return out;
}

double adversarial_weight(double lambda, std::int64_t step, std::int64_t total_steps, double fraction) {
  const double ramp = fraction * static_cast<double>(total_steps);
  if (ramp <= 0.0) return lambda;
  return lambda * std::min(1.0, static_cast<double>(step) / ramp);
}

}  // namespace sucode
