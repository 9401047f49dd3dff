#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>

#include "metric_oracle.hpp"
#include "sucode/errors.hpp"
#include "sucode/metrics.hpp"
#include "support.hpp"

using namespace sucode;
using sucode::testing::ScratchDir;

namespace {

oracle::Rgb to_rgb(const ImageTensor& img) {
  const auto d = img.data().to(torch::kFloat64).contiguous();
  oracle::Rgb r{static_cast<int>(img.height()), static_cast<int>(img.width()), {}};
  r.px.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  return r;
}

ImageTensor constant(int h, int w, double r, double g, double b) { return ImageTensor::filled(h, w, r, g, b); }

/// Smooth gradient with a coloured blob, to keep every index well away from
/// its degenerate branches.
ImageTensor scene(int h, int w) {
  auto t = torch::zeros({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double blob = std::exp(-((y - h / 3.0) * (y - h / 3.0) + (x - w / 2.0) * (x - w / 2.0)) / 60.0);
      t[y][x][0] = 0.15 + 0.6 * blob;
      t[y][x][1] = 0.3 + 0.4 * x / static_cast<double>(w);
      t[y][x][2] = 0.5 + 0.3 * y / static_cast<double>(h) - 0.2 * blob;
    }
  return ImageTensor(t);
}

}  // namespace

TEST_CASE("psnr examples") {
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));
  CHECK(psnr_from_mse(1e-4) == doctest::Approx(40.0));
  CHECK(psnr_from_mse(0.0) == kPsnrCap);
  const auto a = sucode::testing::random_image(16, 16, 1);
  CHECK(psnr(a, a) == kPsnrCap);
  const auto b = constant(8, 8, 0.1, 0.1, 0.1);
  CHECK(psnr(b, constant(8, 8, 0.2, 0.2, 0.2)) == doctest::Approx(20.0).epsilon(1e-5));
  double prev = kPsnrCap + 1;
  for (double mse : {1e-6, 1e-4, 1e-3, 0.01, 0.1, 1.0}) {
    CHECK(psnr_from_mse(mse) < prev);
    prev = psnr_from_mse(mse);
  }
}

TEST_CASE("ssim properties") {
  const auto a = sucode::testing::random_image(32, 32, 2), b = sucode::testing::random_image(32, 32, 3);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  auto half = torch::zeros({32, 32, 3});
  half.narrow(1, 16, 16).fill_(1.0);
  const ImageTensor h(half), inv(1.0 - half);
  CHECK(ssim(h, inv) < 0.5);
  CHECK_THROWS_AS(ssim(constant(8, 8, 0, 0, 0), constant(8, 8, 0, 0, 0)), ShapeError);
}

TEST_CASE("uciqe degenerate forms and oracle agreement") {
  CHECK(uciqe(constant(20, 20, 0.4, 0.4, 0.4)) == doctest::Approx(0.0));
  // A constant colour has no chroma spread and no contrast; only saturation remains.
  const auto parts = uciqe_parts(constant(20, 20, 0.6, 0.3, 0.2));
  CHECK(parts.chroma_std == doctest::Approx(0.0));
  CHECK(parts.luma_contrast == doctest::Approx(0.0));
  CHECK(parts.value == doctest::Approx(0.2576 * parts.mean_saturation));
  const auto img = scene(40, 50);
  CHECK(uciqe(img, true) == doctest::Approx(100 * uciqe(img)).epsilon(1e-12));
  for (const auto& im : {img, sucode::testing::random_image(33, 27, 4), constant(12, 12, 0.6, 0.3, 0.2)})
    CHECK(std::abs(uciqe(im) - oracle::uciqe(to_rgb(im))) < 1e-6);
}

TEST_CASE("uiqm degenerate forms, flip invariance and oracle agreement") {
  const auto c = uiqm_parts(constant(30, 30, 0.6, 0.3, 0.2));
  CHECK(c.uism == 0.0);
  CHECK(c.uiconm == 0.0);
  const double rg = (0.6 - 0.3) * 255, yb = (0.45 - 0.2) * 255;
  CHECK(c.uicm == doctest::Approx(-0.0268 * std::hypot(rg, yb)).epsilon(1e-5));
  CHECK(c.value == doctest::Approx(0.0282 * c.uicm));

  const auto gray = uiqm_parts(constant(30, 30, 0.5, 0.5, 0.5));
  CHECK(gray.uicm == doctest::Approx(0.0));
  CHECK(gray.value == doctest::Approx(0.0));

  const auto img = scene(40, 60);
  const ImageTensor flipped(img.data().flip({1}));
  CHECK(uiqm(flipped) == doctest::Approx(uiqm(img)).epsilon(1e-9));

  for (const auto& im : {img, sucode::testing::random_image(35, 47, 5)}) {
    const auto mine = uiqm_parts(im);
    const auto ref = oracle::uiqm(to_rgb(im));
    CHECK(std::abs(mine.uicm - ref.uicm) < 1e-6);
    CHECK(std::abs(mine.uism - ref.uism) < 1e-6);
    CHECK(std::abs(mine.uiconm - ref.uiconm) < 1e-6);
    CHECK(std::abs(mine.value - ref.value) < 1e-6);
  }
}

TEST_CASE("evaluate_dataset") {
  ScratchDir pred("pred"), ref("ref"), empty("empty");
  const auto a = sucode::testing::random_image(24, 24, 6), b = sucode::testing::random_image(24, 24, 7);
  write_image(pred / "a.png", a);
  write_image(pred / "b.png", b);
  write_image(ref / "a.png", a);
  write_image(ref / "b.png", b);

  const auto same = evaluate_dataset(pred.path(), ref.path());
  REQUIRE(same.rows.size() == 2);
  CHECK(same.rows[0].id == "a");
  CHECK(*same.mean().psnr == kPsnrCap);
  CHECK(*same.mean().ssim == doctest::Approx(1.0));
  const auto csv = same.to_csv();
  CHECK(csv.rfind("id,psnr,ssim,uciqe,uiqm\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);

  const auto nr = evaluate_dataset(pred.path(), std::nullopt);
  CHECK_FALSE(nr.full_reference);
  CHECK_FALSE(nr.rows[0].psnr.has_value());
  CHECK(nr.to_csv().rfind("id,uciqe,uiqm\n", 0) == 0);
  CHECK(nr.mean().uiqm == doctest::Approx((nr.rows[0].uiqm + nr.rows[1].uiqm) / 2).epsilon(1e-12));
  CHECK(std::abs(nr.mean().uciqe - (nr.rows[0].uciqe + nr.rows[1].uciqe) / 2) < 1e-9);

  CHECK_THROWS_AS(evaluate_dataset(empty.path(), std::nullopt), EvalEmptyError);
  std::filesystem::remove(ref / "b.png");
  CHECK_THROWS_AS(evaluate_dataset(pred.path(), ref.path()), IoError);
}
