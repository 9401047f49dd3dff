#include "sucode/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <vector>

namespace sucode::kernels {

namespace {

std::vector<double> gaussian_taps(const SsimParams& p) {
  std::vector<double> taps(p.window);
  const int half = p.window / 2;
  double sum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    const double d = i - half;
    taps[i] = std::exp(-(d * d) / (2.0 * p.sigma * p.sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

double ssim_from_moments(double mu_a, double mu_b, double e_aa, double e_bb, double e_ab,
                         const SsimParams& p) {
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  const double var_a = e_aa - mu_a * mu_a;
  const double var_b = e_bb - mu_b * mu_b;
  const double cov = e_ab - mu_a * mu_b;
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

inline int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - i - 1;
  return i;
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------

namespace serial {

void assign_codes(std::span<const float> features, std::span<const std::int64_t> book_of_row,
                  std::span<const float> books, BookShape shape, std::span<std::int64_t> out) {
  const std::int64_t rows = static_cast<std::int64_t>(out.size());
  for (std::int64_t i = 0; i < rows; ++i) {
    const std::int64_t book = book_of_row.empty() ? 0 : book_of_row[i];
    std::int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < shape.entries; ++j) {
      double d = 0.0;
      for (std::int64_t k = 0; k < shape.dim; ++k) {
        const double diff = static_cast<double>(features[i * shape.dim + k]) -
                            static_cast<double>(books[(book * shape.entries + j) * shape.dim + k]);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out[i] = best;
  }
}

void majority_downsample(std::span<const std::int64_t> labels, int height, int width, int factor,
                         std::span<std::int64_t> out) {
  const int oh = height / factor;
  const int ow = width / factor;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      std::int64_t best_label = 0;
      int best_count = 0;
      // O(f^4) count: fine for a reference.
      for (int y = 0; y < factor; ++y) {
        for (int x = 0; x < factor; ++x) {
          const std::int64_t l = labels[(oy * factor + y) * width + ox * factor + x];
          int count = 0;
          for (int yy = 0; yy < factor; ++yy)
            for (int xx = 0; xx < factor; ++xx)
              count += labels[(oy * factor + yy) * width + ox * factor + xx] == l;
          if (count > best_count || (count == best_count && l < best_label)) {
            best_count = count;
            best_label = l;
          }
        }
      }
      out[oy * ow + ox] = best_label;
    }
  }
}

void morph_disk(std::span<const std::uint8_t> in, int height, int width, int radius, bool erode,
                std::span<std::uint8_t> out) {
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      bool result = erode ? in[y * width + x] != 0 : false;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
          const bool v = in[yy * width + xx] != 0;
          if (erode && !v) result = false;
          if (!erode && v) result = true;
        }
      }
      out[y * width + x] = result ? 1 : 0;
    }
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& p) {
  const auto taps = gaussian_taps(p);
  const int oh = height - p.window + 1;
  const int ow = width - p.window + 1;
  double total = 0.0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double mu_a = 0, mu_b = 0, e_aa = 0, e_bb = 0, e_ab = 0;
      for (int i = 0; i < p.window; ++i) {
        for (int j = 0; j < p.window; ++j) {
          const double w = taps[i] * taps[j];
          const double va = a[(y + i) * width + x + j];
          const double vb = b[(y + i) * width + x + j];
          mu_a += w * va;
          mu_b += w * vb;
          e_aa += w * va * va;
          e_bb += w * vb * vb;
          e_ab += w * va * vb;
        }
      }
      total += ssim_from_moments(mu_a, mu_b, e_aa, e_bb, e_ab, p);
    }
  }
  return total / (static_cast<double>(oh) * ow);
}

void sobel_magnitude(std::span<const double> img, int height, int width, std::span<double> out) {
  auto at = [&](int y, int x) { return img[reflect(y, height) * width + reflect(x, width)]; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      out[y * width + x] = std::hypot(gx, gy);
    }
  }
}

double block_log_ratio_sum(std::span<const double> img, int height, int width, int block) {
  const int by = height / block;
  const int bx = width / block;
  double total = 0.0;
  for (int j = 0; j < by; ++j) {
    for (int i = 0; i < bx; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      double mn = std::numeric_limits<double>::infinity();
      for (int y = j * block; y < (j + 1) * block; ++y) {
        for (int x = i * block; x < (i + 1) * block; ++x) {
          mx = std::max(mx, img[y * width + x]);
          mn = std::min(mn, img[y * width + x]);
        }
      }
      if (mx != 0.0 && mn != 0.0) total += std::log(mx / mn);
    }
  }
  return total;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP
// ---------------------------------------------------------------------------

namespace omp {

void assign_codes(std::span<const float> features, std::span<const std::int64_t> book_of_row,
                  std::span<const float> books, BookShape shape, std::span<std::int64_t> out) {
  const std::int64_t rows = static_cast<std::int64_t>(out.size());
  const std::int64_t dim = shape.dim;
  const float* feat = features.data();
  const float* book_base = books.data();
  const std::int64_t* owner = book_of_row.empty() ? nullptr : book_of_row.data();

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const float* f = feat + i * dim;
    const float* book = book_base + (owner ? owner[i] : 0) * shape.entries * dim;
    std::int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < shape.entries; ++j) {
      const float* e = book + j * dim;
      double d = 0.0;
      for (std::int64_t k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(f[k]) - static_cast<double>(e[k]);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out[i] = best;
  }
}

void majority_downsample(std::span<const std::int64_t> labels, int height, int width, int factor,
                         std::span<std::int64_t> out) {
  const int oh = height / factor;
  const int ow = width / factor;
  const std::int64_t max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());

#pragma omp parallel
  {
    std::vector<int> counts(static_cast<std::size_t>(max_label) + 1);
#pragma omp for schedule(static)
    for (int cell = 0; cell < oh * ow; ++cell) {
      const int oy = cell / ow;
      const int ox = cell % ow;
      std::fill(counts.begin(), counts.end(), 0);
      for (int y = 0; y < factor; ++y)
        for (int x = 0; x < factor; ++x)
          ++counts[labels[(oy * factor + y) * width + ox * factor + x]];
      // max_element returns the first maximum, i.e. the lowest label.
      out[cell] = std::max_element(counts.begin(), counts.end()) - counts.begin();
    }
  }
}

void morph_disk(std::span<const std::uint8_t> in, int height, int width, int radius, bool erode,
                std::span<std::uint8_t> out) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dy, dx);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool self = in[y * width + x] != 0;
      if (erode && !self) {
        out[y * width + x] = 0;
        continue;
      }
      if (!erode && self) {
        out[y * width + x] = 1;
        continue;
      }
      bool result = erode;
      for (auto [dy, dx] : offsets) {
        const int yy = y + dy;
        const int xx = x + dx;
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
        if ((in[yy * width + xx] != 0) != erode) {
          result = !erode;
          break;
        }
      }
      out[y * width + x] = result ? 1 : 0;
    }
  }
}

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& p) {
  const auto taps = gaussian_taps(p);
  const int oh = height - p.window + 1;
  const int ow = width - p.window + 1;

  // Horizontal pass over the five moment images, then vertical.
  std::vector<double> h(5 * static_cast<std::size_t>(height) * ow);
  auto hidx = [&](int m, int y, int x) { return (static_cast<std::size_t>(m) * height + y) * ow + x; };
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int j = 0; j < p.window; ++j) {
        const double w = taps[j];
        const double va = a[y * width + x + j];
        const double vb = b[y * width + x + j];
        s[0] += w * va;
        s[1] += w * vb;
        s[2] += w * va * va;
        s[3] += w * vb * vb;
        s[4] += w * va * vb;
      }
      for (int m = 0; m < 5; ++m) h[hidx(m, y, x)] = s[m];
    }
  }

  double total = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : total)
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int i = 0; i < p.window; ++i)
        for (int m = 0; m < 5; ++m) s[m] += taps[i] * h[hidx(m, y + i, x)];
      total += ssim_from_moments(s[0], s[1], s[2], s[3], s[4], p);
    }
  }
  return total / (static_cast<double>(oh) * ow);
}

void sobel_magnitude(std::span<const double> img, int height, int width, std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    const double* up = img.data() + reflect(y - 1, height) * width;
    const double* mid = img.data() + y * width;
    const double* down = img.data() + reflect(y + 1, height) * width;
    for (int x = 0; x < width; ++x) {
      const int l = reflect(x - 1, width);
      const int r = reflect(x + 1, width);
      const double gy = (down[l] + 2 * down[x] + down[r]) - (up[l] + 2 * up[x] + up[r]);
      const double gx = (up[r] + 2 * mid[r] + down[r]) - (up[l] + 2 * mid[l] + down[l]);
      out[y * width + x] = std::hypot(gx, gy);
    }
  }
}

double block_log_ratio_sum(std::span<const double> img, int height, int width, int block) {
  const int by = height / block;
  const int bx = width / block;
  double total = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : total)
  for (int t = 0; t < by * bx; ++t) {
    const int j = t / bx;
    const int i = t % bx;
    double mx = -std::numeric_limits<double>::infinity();
    double mn = std::numeric_limits<double>::infinity();
    for (int y = j * block; y < (j + 1) * block; ++y) {
      const double* row = img.data() + y * width + i * block;
      const auto [lo, hi] = std::minmax_element(row, row + block);
      mn = std::min(mn, *lo);
      mx = std::max(mx, *hi);
    }
    if (mx != 0.0 && mn != 0.0) total += std::log(mx / mn);
  }
  return total;
}

}  // namespace omp

}  // namespace sucode::kernels
