#pragma once

// Data-parallel inner loops used by the quantizer, mask tools and metrics.
//
// Every kernel exists twice: `serial::` is the straight-line reference kept
// for tests, `omp::` is the OpenMP version used in production. The pairs are
// required to agree index-exactly (integer outputs) or to 1e-12 relative
// (floating outputs); tests/test_kernels.cpp holds them to that.

#include <cstdint>
#include <span>

namespace sucode::kernels {

/// Geometry of a stack of codebooks laid out as [books][entries][dim].
struct BookShape {
  std::int64_t books = 1;
  std::int64_t entries = 0;
  std::int64_t dim = 0;
};

/// Gaussian window used by SSIM.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace serial {

/// For each of the L rows of `features` ([L][dim]) picks the entry of book
/// `book_of_row[i]` with the smallest squared distance, lowest index on ties.
/// An empty `book_of_row` means every row uses book 0.
void assign_codes(std::span<const float> features, std::span<const std::int64_t> book_of_row,
                  std::span<const float> books, BookShape shape, std::span<std::int64_t> out);

/// Majority label of each factor x factor block; ties go to the lowest label.
void majority_downsample(std::span<const std::int64_t> labels, int height, int width, int factor,
                         std::span<std::int64_t> out);

/// Binary erosion/dilation with a disk of the given radius. Pixels outside
/// the image are ignored (they neither erode nor dilate).
void morph_disk(std::span<const std::uint8_t> in, int height, int width, int radius, bool erode,
                std::span<std::uint8_t> out);

/// Mean SSIM over the valid (un-padded) window positions of two gray images.
double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& p);

/// |Sobel gradient| with mirror ("reflect") borders.
void sobel_magnitude(std::span<const double> img, int height, int width, std::span<double> out);

/// Sum over non-overlapping block x block tiles (anchored top-left, partial
/// tiles dropped) of log(max/min); tiles with max == 0 or min == 0 add 0.
double block_log_ratio_sum(std::span<const double> img, int height, int width, int block);

}  // namespace serial

namespace omp {

void assign_codes(std::span<const float> features, std::span<const std::int64_t> book_of_row,
                  std::span<const float> books, BookShape shape, std::span<std::int64_t> out);

void majority_downsample(std::span<const std::int64_t> labels, int height, int width, int factor,
                         std::span<std::int64_t> out);

void morph_disk(std::span<const std::uint8_t> in, int height, int width, int radius, bool erode,
                std::span<std::uint8_t> out);

double ssim_mean(std::span<const double> a, std::span<const double> b, int height, int width,
                 const SsimParams& p);

void sobel_magnitude(std::span<const double> img, int height, int width, std::span<double> out);

double block_log_ratio_sum(std::span<const double> img, int height, int width, int block);

}  // namespace omp

}  // namespace sucode::kernels
