#include "doctest_torch.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "sucode/kernels.hpp"

namespace k = sucode::kernels;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

TEST_CASE("assign_codes: serial and parallel agree exactly") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const k::BookShape shape{1 + static_cast<int>(rng() % 4), 2 + static_cast<int>(rng() % 30),
                             1 + static_cast<int>(rng() % 12)};
    const std::int64_t rows = 1 + rng() % 300;
    std::normal_distribution<float> n(0, 1);
    std::vector<float> feats(rows * shape.dim), books(shape.books * shape.entries * shape.dim);
    for (auto& f : feats) f = n(rng);
    for (auto& b : books) b = n(rng);
    // Duplicate an entry so ties are exercised.
    std::copy_n(books.begin(), shape.dim, books.begin() + shape.dim);
    std::vector<std::int64_t> cls(rows);
    for (auto& c : cls) c = rng() % shape.books;
    std::vector<std::int64_t> a(rows), b(rows);
    k::serial::assign_codes(feats, cls, books, shape, a);
    k::omp::assign_codes(feats, cls, books, shape, b);
    CHECK(a == b);
    // Entries 0 and 1 of book 0 are equal; the tie goes to entry 0.
    for (std::int64_t i = 0; i < rows; ++i)
      if (cls[i] == 0) CHECK(a[i] != 1);
    k::serial::assign_codes(feats, {}, books, shape, a);
    k::omp::assign_codes(feats, {}, books, shape, b);
    CHECK(a == b);
  }
}

TEST_CASE("majority_downsample: serial and parallel agree exactly") {
  std::mt19937_64 rng(2);
  for (int factor : {1, 2, 4, 8}) {
    const int h = factor * (1 + rng() % 9), w = factor * (1 + rng() % 9);
    std::vector<std::int64_t> labels(h * w);
    for (auto& l : labels) l = rng() % 5;
    std::vector<std::int64_t> a((h / factor) * (w / factor)), b(a.size());
    k::serial::majority_downsample(labels, h, w, factor, a);
    k::omp::majority_downsample(labels, h, w, factor, b);
    CHECK(a == b);
  }
}

TEST_CASE("morph_disk: serial and parallel agree exactly") {
  std::mt19937_64 rng(3);
  const int h = 37, w = 29;
  std::vector<std::uint8_t> in(h * w);
  for (auto& v : in) v = rng() % 3 == 0;
  for (int radius : {0, 1, 3, 7})
    for (bool erode : {true, false}) {
      std::vector<std::uint8_t> a(in.size()), b(in.size());
      k::serial::morph_disk(in, h, w, radius, erode, a);
      k::omp::morph_disk(in, h, w, radius, erode, b);
      CHECK(a == b);
      if (radius == 0) CHECK(a == in);
    }
}

TEST_CASE("ssim_mean: serial and parallel agree") {
  const int h = 23, w = 31;
  const auto x = uniform(h * w, 4), y = uniform(h * w, 5);
  const k::SsimParams p;
  CHECK(close(k::serial::ssim_mean(x, y, h, w, p), k::omp::ssim_mean(x, y, h, w, p)));
  CHECK(k::omp::ssim_mean(x, x, h, w, p) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sobel_magnitude: serial and parallel agree") {
  const int h = 17, w = 40;
  const auto x = uniform(h * w, 6, 0, 255);
  std::vector<double> a(x.size()), b(x.size());
  k::serial::sobel_magnitude(x, h, w, a);
  k::omp::sobel_magnitude(x, h, w, b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(close(a[i], b[i]));
  std::vector<double> flat(h * w, 3.0), g(h * w);
  k::omp::sobel_magnitude(flat, h, w, g);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("block_log_ratio_sum: serial and parallel agree") {
  const int h = 45, w = 52;
  auto x = uniform(h * w, 7, 0, 255);
  x[0] = 0;  // a zero-min tile contributes nothing
  CHECK(close(k::serial::block_log_ratio_sum(x, h, w, 10), k::omp::block_log_ratio_sum(x, h, w, 10)));
  std::vector<double> c(h * w, 5.0);
  CHECK(k::omp::block_log_ratio_sum(c, h, w, 10) == 0.0);
}
