#include "doctest_torch.hpp"

#include <cmath>

#include "sucode/errors.hpp"
#include "sucode/losses.hpp"

using namespace sucode;

namespace {

/// Gradient of `y` w.r.t. `x`, zeros when `y` does not depend on `x`.
torch::Tensor grad_of(const torch::Tensor& y, const torch::Tensor& x) {
  auto g = torch::autograd::grad({y}, {x}, {}, true, false, true)[0];
  return g.defined() ? g : torch::zeros_like(x);
}

LossComponents all_ones() {
  LossComponents c;
  const auto one = torch::ones({});
  c.pixel = c.perceptual = c.adversarial = c.vq = c.code = one;
  return c;
}

}  // namespace

TEST_CASE("pixel_l1 examples") {
  const auto a = torch::rand({1, 3, 8, 8});
  CHECK(pixel_l1(a, a).item<double>() == 0.0);
  CHECK(pixel_l1(torch::zeros({1, 3, 4, 4}), torch::ones({1, 3, 4, 4})).item<double>() == 1.0);
  auto half = torch::zeros({1, 3, 4, 4});
  half.narrow(2, 0, 2).fill_(0.5);
  CHECK(pixel_l1(torch::zeros({1, 3, 4, 4}), half).item<double>() == doctest::Approx(0.25));
  CHECK_THROWS_AS(pixel_l1(a, torch::rand({1, 3, 8, 4})), ShapeError);
}

TEST_CASE("perceptual loss is zero on identity, symmetric and seed-determined") {
  PerceptualExtractor phi(3), phi2(3);
  const auto a = torch::rand({2, 3, 32, 32}), b = torch::rand({2, 3, 32, 32});
  CHECK(perceptual_loss(a, a, phi).item<double>() == 0.0);
  CHECK(perceptual_loss(a, b, phi).item<double>() == perceptual_loss(b, a, phi).item<double>());
  CHECK(perceptual_loss(a, b, phi).item<double>() == perceptual_loss(a, b, phi2).item<double>());
  CHECK(perceptual_loss(a, b, phi).item<double>() > 0.0);
  for (const auto& p : phi->parameters()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("adversarial losses") {
  const auto zero = torch::zeros({1, 1, 4, 4});
  const auto l = adversarial_losses(zero, zero);
  CHECK(l.discriminator.item<double>() == doctest::Approx(2 * std::log(2.0)));
  CHECK(l.generator.item<double>() == doctest::Approx(std::log(2.0)));

  const auto sat = adversarial_losses(torch::full({1, 1, 2, 2}, -50.0), torch::full({1, 1, 2, 2}, 50.0));
  CHECK(sat.discriminator.item<double>() < 1e-12);

  double prev = INFINITY;
  for (double v = -6; v <= 6; v += 0.25) {
    const double g = adversarial_losses(torch::full({1, 1, 1, 1}, v), zero.narrow(2, 0, 1).narrow(3, 0, 1))
                         .generator.item<double>();
    CHECK(g < prev);
    CHECK(g >= 0.0);
    prev = g;
  }
}

TEST_CASE("vq loss terms and routing") {
  const auto z = torch::randn({1, 4, 3, 3});
  const auto phi_x = torch::randn({1, 64, 3, 3});
  auto exact = vq_loss(z, z.clone(), torch::randn({1, 64, 3, 3}), phi_x, 0.25, 0.1);
  CHECK(exact.codebook.item<double>() == 0.0);
  CHECK(exact.commit.item<double>() == 0.0);

  const auto sel = torch::randn({1, 4, 3, 3});
  auto no_sem = vq_loss(z, sel, torch::randn({1, 64, 6, 6}), phi_x, 0.25, 0.0);
  CHECK(no_sem.total.item<double>() ==
        doctest::Approx(no_sem.codebook.item<double>() + 0.25 * no_sem.commit.item<double>()));

  // Codebook rows receive gradient only from the codebook term; encoder
  // outputs only from the commitment and semantic terms.
  auto zh = torch::randn({1, 4, 3, 3}).requires_grad_(true);
  auto zs = torch::randn({1, 4, 3, 3}).requires_grad_(true);
  auto pj = torch::randn({1, 64, 3, 3}).requires_grad_(true);
  auto t = vq_loss(zh, zs, pj, phi_x, 0.25, 0.1);
  CHECK(grad_of(t.codebook, zh).abs().max().item<double>() == 0.0);
  CHECK(grad_of(t.codebook, zs).abs().max().item<double>() > 0.0);
  CHECK(grad_of(t.commit, zs).abs().max().item<double>() == 0.0);
  CHECK(grad_of(t.commit, zh).abs().max().item<double>() > 0.0);
  CHECK(grad_of(t.semantic, zs).abs().max().item<double>() == 0.0);
  CHECK(grad_of(t.semantic, pj).abs().max().item<double>() > 0.0);
}

TEST_CASE("code loss") {
  const auto a = torch::randn({1, 4, 2, 2});
  CHECK(code_loss(a, a, 0.25).item<double>() == 0.0);
  CHECK(code_loss(a, a + 1, 0.25).item<double>() == doctest::Approx(0.25));
  auto zh = torch::randn({1, 4, 2, 2}).requires_grad_(true);
  auto zg = torch::randn({1, 4, 2, 2}).requires_grad_(true);
  const auto l = code_loss(zh, zg, 0.25);
  CHECK(grad_of(l, zg).abs().max().item<double>() == 0.0);
  CHECK_THROWS_AS(code_loss(a, torch::randn({1, 4, 2, 3}), 0.25), ShapeError);
}

TEST_CASE("stage totals") {
  auto c = all_ones();
  CHECK(stage_total(1, c, 0.1).report.total == doctest::Approx(3.1));

  LossComponents s3;
  s3.pixel = torch::tensor(0.5);
  s3.perceptual = torch::tensor(0.2);
  s3.adversarial = torch::tensor(1.0);
  s3.code = torch::tensor(0.1);
  CHECK(stage_total(3, s3, 0.1).report.total == doctest::Approx(0.9));

  auto no_vq = all_ones();
  no_vq.vq.reset();
  CHECK_THROWS_AS(stage_total(2, no_vq, 0.1), LossSpecError);
  CHECK_THROWS_AS(stage_total(4, all_ones(), 0.1), LossSpecError);
}

TEST_CASE("stage totals are linear in each component") {
  const double coeff[] = {1, 1, 0.1, 1};
  for (int stage : {1, 2, 3}) {
    const double base = stage_total(stage, all_ones(), 0.1).report.total;
    for (int k = 0; k < 4; ++k) {
      auto c = all_ones();
      auto bump = torch::tensor(3.0f);
      if (k == 0) c.pixel = bump;
      if (k == 1) c.perceptual = bump;
      if (k == 2) c.adversarial = bump;
      if (k == 3) (stage == 3 ? c.code : c.vq) = bump;
      CHECK(stage_total(stage, c, 0.1).report.total - base == doctest::Approx(2 * coeff[k]));
    }
  }
}

TEST_CASE("adversarial warm-up ramps linearly") {
  CHECK(adversarial_weight(0.1, 0, 1000, 0.1) == 0.0);
  CHECK(adversarial_weight(0.1, 50, 1000, 0.1) == doctest::Approx(0.05));
  CHECK(adversarial_weight(0.1, 100, 1000, 0.1) == doctest::Approx(0.1));
  CHECK(adversarial_weight(0.1, 900, 1000, 0.1) == doctest::Approx(0.1));
  CHECK(adversarial_weight(0.1, 0, 1000, 0.0) == doctest::Approx(0.1));
}
