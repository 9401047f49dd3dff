#include "doctest_torch.hpp"

#include <cmath>

#include "sucode/errors.hpp"
#include "sucode/networks.hpp"
#include "support.hpp"

using namespace sucode;
using sucode::testing::finite_difference_check;

namespace {

BackboneOptions small_backbone(int in, int out, std::vector<int> mult = {1, 2}) {
  BackboneOptions o;
  o.in_channels = in;
  o.out_channels = out;
  o.base_channels = 4;
  o.channel_mult = std::move(mult);
  o.res_blocks = 1;
  return o;
}

/// Moves a module to double precision and jitters every parameter so that
/// zero-initialised gates do not hide gradient paths.
std::vector<torch::Tensor> to_double_jittered(torch::nn::Module& m, std::uint64_t seed) {
  m.to(torch::kFloat64);
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> ps;
  for (auto& p : m.parameters()) {
    p.add_(0.1 * torch::randn(p.sizes(), g, torch::kFloat64));
    ps.push_back(p);
  }
  return ps;
}

torch::Tensor probe(const torch::Tensor& like, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(like.sizes(), g, torch::kFloat64);
}

constexpr double kGradTol = 1e-3;

}  // namespace

TEST_CASE("encoder downsampling") {
  torch::manual_seed(0);
  Encoder enc(small_backbone(3, 4, {1, 1, 2}));
  CHECK(enc->downsample_factor() == 8);
  CHECK(enc->forward(torch::rand({2, 3, 64, 64})).sizes() == torch::IntArrayRef({2, 4, 8, 8}));
  CHECK(enc->forward(torch::rand({1, 3, 32, 48})).sizes() == torch::IntArrayRef({1, 4, 4, 6}));
  CHECK_THROWS_AS(enc->forward(torch::rand({1, 3, 250, 256})), ShapeError);
}

TEST_CASE("decoder taps and output size") {
  torch::manual_seed(1);
  Decoder dec(small_backbone(4, 3), DecoderKind::Plain);
  const auto out = dec->forward_with_taps(torch::randn({1, 4, 4, 4}));
  CHECK(out.image.sizes() == torch::IntArrayRef({1, 3, 16, 16}));
  REQUIRE(out.taps.size() == 2);
  CHECK(out.taps[0].sizes() == torch::IntArrayRef({1, 8, 4, 4}));
  CHECK(out.taps[1].sizes() == torch::IntArrayRef({1, 4, 8, 8}));

  Decoder fused(small_backbone(4, 3), DecoderKind::Fused);
  CHECK(fused->has_faff(0));
  CHECK(fused->has_faff(1));
  CHECK_THROWS_AS(fused->forward_fused(torch::randn({1, 4, 4, 4}), {out.taps[0]}), ShapeError);
  CHECK_THROWS_AS(fused->forward_fused(torch::randn({1, 4, 4, 4}), {out.taps[1], out.taps[0]}), ShapeError);
  CHECK(fused->forward_fused(torch::randn({1, 4, 4, 4}), out.taps).sizes() == torch::IntArrayRef({1, 3, 16, 16}));

  Decoder finest(small_backbone(4, 3), DecoderKind::Fused, false);
  CHECK_FALSE(finest->has_faff(0));
  CHECK(finest->has_faff(1));
}

TEST_CASE("GCAM with a zeroed projection is the identity") {
  torch::manual_seed(2);
  Gcam g(6);
  g->zero_inner_projection();
  const auto x = torch::randn({2, 6, 5, 7});
  CHECK(torch::equal(g->forward(x), x));
  CHECK_THROWS_AS(g->forward(torch::randn({1, 4, 5, 5})), ShapeError);
}

TEST_CASE("weight predictor outputs lie on the simplex") {
  torch::manual_seed(3);
  WeightPredictor wp(8, 5, 2, 2);
  for (auto shape : {std::vector<int64_t>{1, 8, 4, 4}, std::vector<int64_t>{2, 8, 3, 5}}) {
    const auto w = wp->forward(torch::randn(shape));
    CHECK(w.size(1) == 5);
    CHECK(w.size(2) == shape[2]);
    CHECK(w.size(3) == shape[3]);
    CHECK((w >= 0).all().item<bool>());
    CHECK((w.sum(1) - 1).abs().max().item<double>() < 1e-6);
  }
  auto two = WeightPredictorImpl::normalize(torch::zeros({1, 2, 1, 1}));
  CHECK(two[0][0][0][0].item<double>() == doctest::Approx(0.5));
  auto skew = torch::zeros({1, 2, 1, 1}, torch::kFloat64);
  skew[0][0][0][0] = std::log(3.0);
  const auto s = WeightPredictorImpl::normalize(skew);
  CHECK(s[0][0][0][0].item<double>() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s[0][1][0][0].item<double>() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("spectral decomposition round trips") {
  for (auto hw : {std::pair{8, 8}, std::pair{6, 9}}) {
    const auto f = torch::randn({2, 3, hw.first, hw.second}, torch::kFloat64);
    const auto s = spectral_decompose(f);
    CHECK((s.phase > -M_PI).all().item<bool>());
    CHECK((s.phase <= M_PI).all().item<bool>());
    CHECK(torch::allclose(spectral_reconstruct(s, hw.first, hw.second), f, 0, 1e-10));
  }
  const auto c = torch::full({1, 1, 4, 6}, 2.5, torch::kFloat64);
  const auto s = spectral_decompose(c);
  CHECK(s.magnitude[0][0][0][0].item<double>() == doctest::Approx(2.5 * 24).epsilon(1e-12));
  CHECK(s.magnitude.sum().item<double>() == doctest::Approx(2.5 * 24).epsilon(1e-9));
  CHECK_THROWS_AS(spectral_reconstruct(s, 4, 8), ShapeError);
}

TEST_CASE("FAFF passes phase through and starts as the enhancement stream") {
  torch::manual_seed(4);
  Faff f(4);
  const auto fr = torch::randn({1, 4, 6, 6}), fe = torch::randn({1, 4, 6, 6});
  auto t = f->trace(fr, fe);
  CHECK(torch::equal(t.f_fus, t.f_in));
  CHECK(torch::equal(t.phase_reconstructed, t.phase_decomposed));
  CHECK(torch::allclose(t.out, fe, 1e-6, 1e-6));

  // With an identity mapper the frequency branch reproduces its input.
  f->identity_mapper = true;
  t = f->trace(fr, fe);
  CHECK(torch::allclose(t.f_freq, t.f_in, 1e-5, 1e-5));

  CHECK_THROWS_AS(f->forward(fr, torch::randn({1, 4, 6, 4})), ShapeError);
}

TEST_CASE("discriminator grid") {
  CHECK(discriminator_grid(256) == 16);
  CHECK(discriminator_grid(64) == 4);
  torch::manual_seed(5);
  Discriminator d(4);
  CHECK(d->forward(torch::rand({2, 3, 64, 64})).sizes() == torch::IntArrayRef({2, 1, 4, 4}));
}

TEST_CASE("cost scope counts convolution multiply-adds") {
  auto c = torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 5, 3).padding(1));
  CostScope outer;
  {
    CostScope inner;
    conv_forward(c, torch::rand({1, 3, 4, 4}));
    CHECK(inner.mult_adds() == 5 * 16 * 3 * 9);
  }
  CHECK(outer.mult_adds() == 5 * 16 * 3 * 9);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks in double precision.

TEST_CASE("gradients: GCAM") {
  torch::manual_seed(10);
  Gcam g(4);
  auto ps = to_double_jittered(*g, 1);
  const auto x = torch::randn({1, 4, 5, 5}, torch::kFloat64);
  const auto w = probe(x, 2);
  const auto r = finite_difference_check(ps, [&] { return (g->forward(x) * w).sum(); }, 0.2, 2, 3);
  CHECK(r.worst_relative < kGradTol);
}

TEST_CASE("gradients: FAFF") {
  torch::manual_seed(11);
  Faff f(4);
  auto ps = to_double_jittered(*f, 4);
  const auto fr = torch::randn({1, 4, 6, 6}, torch::kFloat64), fe = torch::randn({1, 4, 6, 6}, torch::kFloat64);
  const auto w = probe(fe, 5);
  const auto r = finite_difference_check(ps, [&] { return (f->forward(fr, fe) * w).sum(); }, 0.2, 2, 6);
  CHECK(r.worst_relative < kGradTol);
}

TEST_CASE("gradients: weight predictor") {
  torch::manual_seed(12);
  WeightPredictor wp(4, 3, 2, 2);
  auto ps = to_double_jittered(*wp, 7);
  const auto z = torch::randn({1, 4, 3, 4}, torch::kFloat64);
  const auto w = probe(torch::zeros({1, 3, 3, 4}), 8);
  const auto r = finite_difference_check(ps, [&] { return (wp->forward(z) * w).sum(); }, 0.1, 2, 9);
  CHECK(r.worst_relative < kGradTol);
}

TEST_CASE("gradients: decoders") {
  const auto z = torch::randn({1, 4, 2, 2}, torch::kFloat64);
  const auto w = probe(torch::zeros({1, 3, 8, 8}), 10);

  SUBCASE("plain") {
    torch::manual_seed(13);
    Decoder d(small_backbone(4, 3), DecoderKind::Plain);
    auto ps = to_double_jittered(*d, 11);
    const auto r = finite_difference_check(ps, [&] { return (d->forward(z) * w).sum(); }, 0.02, 2, 12);
    CHECK(r.worst_relative < kGradTol);
  }
  SUBCASE("gated") {
    torch::manual_seed(14);
    Decoder d(small_backbone(4, 3), DecoderKind::Gated);
    auto ps = to_double_jittered(*d, 13);
    const auto r = finite_difference_check(ps, [&] { return (d->forward(z) * w).sum(); }, 0.02, 2, 14);
    CHECK(r.worst_relative < kGradTol);
  }
  SUBCASE("fused") {
    torch::manual_seed(15);
    Decoder raw(small_backbone(4, 3), DecoderKind::Gated);
    raw->to(torch::kFloat64);
    std::vector<torch::Tensor> taps;
    {
      torch::NoGradGuard ng;
      taps = raw->forward_with_taps(z).taps;
    }
    Decoder d(small_backbone(4, 3), DecoderKind::Fused);
    auto ps = to_double_jittered(*d, 15);
    const auto r = finite_difference_check(ps, [&] { return (d->forward_fused(z, taps) * w).sum(); }, 0.02, 2, 16);
    CHECK(r.worst_relative < kGradTol);
  }
}
