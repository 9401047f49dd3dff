#pragma once

// Shared fixtures: tiny configs, scratch directories, finite differences.

#include <torch/torch.h>
#include <ATen/CPUGeneratorImpl.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "sucode/config.hpp"
#include "sucode/image.hpp"

namespace sucode::testing {

/// 16x16 images, factor 4, two levels of width 8: trains a step in milliseconds.
inline RunConfig tiny_config() {
  RunConfig c;
  c.class_count = 3;
  c.codebook_entries = 8;
  c.embed_dim = 4;
  c.base_channels = 8;
  c.channel_mult = {1, 2};
  c.res_blocks = 1;
  c.disc_channels = 4;
  c.window_size = 2;
  c.attn_heads = 1;
  c.image_size = 16;
  c.downsample_factor = 4;
  c.batch_size = 2;
  c.epochs = 1;
  c.seed = 11;
  c.validate();
  return c;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sucode_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageTensor random_image(int h, int w, std::uint64_t seed) {
  auto g = at::make_generator<at::CPUGeneratorImpl>(seed);
  return ImageTensor(torch::rand({h, w, 3}, g, torch::kFloat32));
}

struct GradCheck {
  double worst_relative = 0;
  int checked = 0;
};

/// Central differences on a sample of the entries of `params` (float64
/// tensors requiring grad) against the autograd gradient of `loss`.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(const std::vector<torch::Tensor>& params,
                                         const std::function<torch::Tensor()>& loss, double fraction,
                                         int min_samples, std::uint64_t seed, double step = 1e-5,
                                         double floor = 1e-6) {
  for (auto p : params)
    if (p.grad().defined()) p.grad().zero_();
  loss().backward();
  std::mt19937_64 rng(seed);
  GradCheck out;
  torch::NoGradGuard ng;
  for (auto p : params) {
    auto flat = p.view({-1});
    auto grad = p.grad().view({-1});
    const auto n = flat.numel();
    const auto want = std::max<std::int64_t>(min_samples, static_cast<std::int64_t>(fraction * static_cast<double>(n)));
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    for (std::int64_t k = 0; k < std::min(want, n); ++k) {
      const auto i = pick(rng);
      const double orig = flat[i].item<double>();
      flat[i] = orig + step;
      const double up = loss().item<double>();
      flat[i] = orig - step;
      const double down = loss().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double analytic = grad[i].item<double>();
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.worst_relative = std::max(out.worst_relative, std::abs(analytic - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

/// Exhaustive nearest entry of `book` ([N, n_z]) for every row of `rows`
/// ([L, n_z]); squared distances in double, lowest index on ties.
inline std::vector<std::int64_t> brute_force_nearest(const torch::Tensor& rows, const torch::Tensor& book) {
  auto r = rows.to(torch::kFloat64).contiguous();
  auto b = book.to(torch::kFloat64).contiguous();
  const auto dim = r.size(1);
  const double* rp = r.data_ptr<double>();
  const double* bp = b.data_ptr<double>();
  std::vector<std::int64_t> out(r.size(0));
  for (std::int64_t i = 0; i < r.size(0); ++i) {
    double best = 1e300;
    for (std::int64_t j = 0; j < b.size(0); ++j) {
      double d = 0;
      for (std::int64_t k = 0; k < dim; ++k) {
        const double diff = rp[i * dim + k] - bp[j * dim + k];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

}  // namespace sucode::testing
