#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sucode/image.hpp"

namespace sucode {

/// Reported for identical images instead of +inf.
inline constexpr double kPsnrCap = 100.0;

double psnr_from_mse(double mse, double peak = 1.0);
double psnr(const ImageTensor& a, const ImageTensor& b, double peak = 1.0);

/// Mean local SSIM of the luminance (0.299 R + 0.587 G + 0.114 B) with an
/// 11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, over valid positions.
double ssim(const ImageTensor& a, const ImageTensor& b);

/// CIELAB (sRGB, D65) based colour quality index. Chroma and lightness are
/// taken on a 0..1 scale; `scaled` multiplies the result by 100.
struct UciqeParts {
  double chroma_std = 0;       // std of chroma
  double luma_contrast = 0;    // mean of top 1% L minus mean of bottom 1% L
  double mean_saturation = 0;  // mean of chroma / L (0 where L = 0)
  double value = 0;
};
UciqeParts uciqe_parts(const ImageTensor& img);
double uciqe(const ImageTensor& img, bool scaled = false);

/// Colourfulness / sharpness / contrast index on the 0..255 scale.
struct UiqmParts {
  double uicm = 0;
  double uism = 0;
  double uiconm = 0;
  double value = 0;
};
UiqmParts uiqm_parts(const ImageTensor& img);
double uiqm(const ImageTensor& img);

struct EvalRow {
  std::string id;
  std::optional<double> psnr, ssim;  // present only with a reference
  double uciqe = 0, uiqm = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  bool full_reference = false;

  /// Arithmetic mean of every column, id "mean".
  EvalRow mean() const;
  /// Header, one line per row, then the mean row.
  std::string to_csv() const;
  std::string to_json() const;
};

/// Scores every PNG in pred_dir; with ref_dir also PSNR and SSIM against the
/// same-named reference. Throws EvalEmptyError when pred_dir has no images.
EvalReport evaluate_dataset(const std::filesystem::path& pred_dir,
                            const std::optional<std::filesystem::path>& ref_dir);

/// Same report for in-memory images; refs, when given, align with preds.
EvalReport evaluate_images(const std::vector<std::pair<std::string, ImageTensor>>& preds,
                           const std::vector<ImageTensor>* refs);

}  // namespace sucode
