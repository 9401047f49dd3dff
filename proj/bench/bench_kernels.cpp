// Serial reference vs OpenMP kernels on representative sizes.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "sucode/kernels.hpp"

namespace k = sucode::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> random_image(int h, int w, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = u(rng);
  return v;
}

// 32x32 latent, 8 books of 256 x 256: the full-size quantization workload.
template <bool Omp>
void BM_AssignCodes(benchmark::State& state) {
  const std::int64_t rows = state.range(0), books = 8, entries = 256, dim = 256;
  auto feats = random_floats(rows * dim, 1);
  auto book = random_floats(books * entries * dim, 2);
  std::vector<std::int64_t> cls(rows), out(rows);
  for (std::int64_t i = 0; i < rows; ++i) cls[i] = i % books;
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::assign_codes(feats, cls, book, {books, entries, dim}, out);
    else
      k::serial::assign_codes(feats, cls, book, {books, entries, dim}, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_AssignCodes<false>)->Name("assign_codes/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_AssignCodes<true>)->Name("assign_codes/omp")->Arg(256)->Arg(1024);

template <bool Omp>
void BM_MajorityDownsample(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937 rng(3);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(side) * side);
  for (auto& l : labels) l = rng() % 8;
  std::vector<std::int64_t> out(static_cast<std::size_t>(side / 8) * (side / 8));
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::majority_downsample(labels, side, side, 8, out);
    else
      k::serial::majority_downsample(labels, side, side, 8, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_MajorityDownsample<false>)->Name("majority_downsample/serial")->Arg(256);
BENCHMARK(BM_MajorityDownsample<true>)->Name("majority_downsample/omp")->Arg(256);

template <bool Omp>
void BM_MorphDisk(benchmark::State& state) {
  const int side = 256, radius = static_cast<int>(state.range(0));
  std::vector<std::uint8_t> in(static_cast<std::size_t>(side) * side), out(in.size());
  for (int y = 64; y < 192; ++y)
    for (int x = 64; x < 192; ++x) in[static_cast<std::size_t>(y) * side + x] = 1;
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::morph_disk(in, side, side, radius, false, out);
    else
      k::serial::morph_disk(in, side, side, radius, false, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_MorphDisk<false>)->Name("morph_disk/serial")->Arg(5)->Arg(10);
BENCHMARK(BM_MorphDisk<true>)->Name("morph_disk/omp")->Arg(5)->Arg(10);

template <bool Omp>
void BM_Ssim(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto a = random_image(side, side, 4);
  auto b = random_image(side, side, 5);
  for (auto _ : state) {
    double v = Omp ? k::omp::ssim_mean(a, b, side, side, {}) : k::serial::ssim_mean(a, b, side, side, {});
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_Ssim<false>)->Name("ssim_mean/serial")->Arg(256);
BENCHMARK(BM_Ssim<true>)->Name("ssim_mean/omp")->Arg(256);

template <bool Omp>
void BM_Sobel(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto img = random_image(side, side, 6);
  std::vector<double> out(img.size());
  for (auto _ : state) {
    if constexpr (Omp)
      k::omp::sobel_magnitude(img, side, side, out);
    else
      k::serial::sobel_magnitude(img, side, side, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Sobel<false>)->Name("sobel_magnitude/serial")->Arg(256);
BENCHMARK(BM_Sobel<true>)->Name("sobel_magnitude/omp")->Arg(256);

}  // namespace

BENCHMARK_MAIN();
