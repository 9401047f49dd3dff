#include "sucode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/kernels.hpp"

namespace fs = std::filesystem;

namespace sucode {

namespace {

// Plane-major float64 copy of an image: out[c * H * W + y * W + x].
std::vector<double> planes(const ImageTensor& img) {
  auto t = img.data().to(torch::kFloat64).permute({2, 0, 1}).contiguous();
  return {t.data_ptr<double>(), t.data_ptr<double>() + t.numel()};
}

std::vector<double> luminance(const ImageTensor& img) {
  const auto p = planes(img);
  const std::size_t n = p.size() / 3;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * p[i] + 0.587 * p[n + i] + 0.114 * p[2 * n + i];
  return y;
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b) {
  if (a.empty() || b.empty() || a.height() != b.height() || a.width() != b.width())
    throw ShapeError("metric inputs differ in shape");
}

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
  constexpr double eps = 216.0 / 24389.0;
  constexpr double kappa = 24389.0 / 27.0;
  return t > eps ? std::cbrt(t) : (kappa * t + 16.0) / 116.0;
}

// Mean of the trimmed sorted sample: drop ceil(aL K) lowest, floor(aR K) highest.
double trimmed_mean(std::vector<double> v, double alpha_low, double alpha_high) {
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::ptrdiff_t>(v.size());
  const auto lo = static_cast<std::ptrdiff_t>(std::ceil(alpha_low * static_cast<double>(k)));
  const auto hi = static_cast<std::ptrdiff_t>(std::floor(alpha_high * static_cast<double>(k)));
  double s = 0;
  for (auto i = lo; i < k - hi; ++i) s += v[static_cast<std::size_t>(i)];
  return s / static_cast<double>(k - lo - hi);
}

double spread_about(const std::vector<double>& v, double mu) {
  double s = 0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size());
}

constexpr int kEmeBlock = 10;

// Centered crop to whole blocks so that mirrored images tile identically.
std::vector<double> block_crop(const std::vector<double>& img, int h, int w, int& ch, int& cw) {
  ch = (h / kEmeBlock) * kEmeBlock;
  cw = (w / kEmeBlock) * kEmeBlock;
  const int oy = (h - ch) / 2, ox = (w - cw) / 2;
  std::vector<double> out(static_cast<std::size_t>(ch) * cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out[static_cast<std::size_t>(y) * cw + x] = img[static_cast<std::size_t>(y + oy) * w + x + ox];
  return out;
}

double eme(const std::vector<double>& img, int h, int w) {
  int ch = 0, cw = 0;
  const auto c = block_crop(img, h, w, ch, cw);
  const int blocks = (ch / kEmeBlock) * (cw / kEmeBlock);
  if (blocks == 0) return 0.0;
  return 2.0 / blocks * kernels::omp::block_log_ratio_sum(c, ch, cw, kEmeBlock);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

}  // namespace

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double psnr(const ImageTensor& a, const ImageTensor& b, double peak) {
  require_same_shape(a, b);
  const double mse = (a.data().to(torch::kFloat64) - b.data().to(torch::kFloat64)).pow(2).mean().item<double>();
  return psnr_from_mse(mse, peak);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b);
  const kernels::SsimParams p;
  if (a.height() < p.window || a.width() < p.window)
    throw ShapeError("image smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) + " SSIM window");
  const auto ya = luminance(a), yb = luminance(b);
  return kernels::omp::ssim_mean(ya, yb, static_cast<int>(a.height()), static_cast<int>(a.width()), p);
}

UciqeParts uciqe_parts(const ImageTensor& img) {
  // sRGB to XYZ (D65), white point folded into the rows.
  static constexpr double m[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                     {0.2126729, 0.7151522, 0.0721750},
                                     {0.0193339, 0.1191920, 0.9503041}};
  const auto p = planes(img);
  const std::size_t n = p.size() / 3;
  std::vector<double> lum(n), chroma(n);
  double sat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rgb[3] = {srgb_to_linear(p[i]), srgb_to_linear(p[n + i]), srgb_to_linear(p[2 * n + i])};
    double f[3];
    for (int r = 0; r < 3; ++r) {
      const double white = m[r][0] + m[r][1] + m[r][2];
      f[r] = lab_f((m[r][0] * rgb[0] + m[r][1] * rgb[1] + m[r][2] * rgb[2]) / white);
    }
    const double l = (116.0 * f[1] - 16.0) / 100.0;
    const double a = 500.0 * (f[0] - f[1]) / 100.0;
    const double b = 200.0 * (f[1] - f[2]) / 100.0;
    lum[i] = l;
    chroma[i] = std::hypot(a, b);
    sat += l > 0 ? chroma[i] / l : 0.0;
  }
  UciqeParts out;
  double mu = 0;
  for (double c : chroma) mu += c;
  mu /= static_cast<double>(n);
  out.chroma_std = std::sqrt(spread_about(chroma, mu));

  std::sort(lum.begin(), lum.end());
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 * static_cast<double>(n))));
  double top = 0, bottom = 0;
  for (std::size_t i = 0; i < k; ++i) {
    bottom += lum[i];
    top += lum[n - 1 - i];
  }
  out.luma_contrast = (top - bottom) / static_cast<double>(k);
  out.mean_saturation = sat / static_cast<double>(n);
  out.value = 0.4680 * out.chroma_std + 0.2745 * out.luma_contrast + 0.2576 * out.mean_saturation;
  return out;
}

double uciqe(const ImageTensor& img, bool scaled) {
  const double v = uciqe_parts(img).value;
  return scaled ? 100.0 * v : v;
}

UiqmParts uiqm_parts(const ImageTensor& img) {
  const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
  auto p = planes(img);
  for (auto& v : p) v *= 255.0;
  const std::size_t n = p.size() / 3;
  UiqmParts out;

  // Colourfulness: asymmetric alpha-trimmed statistics of the opponent planes.
  std::vector<double> rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    rg[i] = p[i] - p[n + i];
    yb[i] = 0.5 * (p[i] + p[n + i]) - p[2 * n + i];
  }
  const double mu_rg = trimmed_mean(rg, 0.1, 0.1), mu_yb = trimmed_mean(yb, 0.1, 0.1);
  out.uicm = -0.0268 * std::hypot(mu_rg, mu_yb) + 0.1586 * std::sqrt(spread_about(rg, mu_rg) + spread_about(yb, mu_yb));

  // Sharpness: EME of each channel's Sobel magnitude times the channel.
  static constexpr double weight[3] = {0.299, 0.587, 0.114};
  std::vector<double> plane(n), edges(n);
  for (int c = 0; c < 3; ++c) {
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(c * n), p.begin() + static_cast<std::ptrdiff_t>((c + 1) * n),
              plane.begin());
    kernels::omp::sobel_magnitude(plane, h, w, edges);
    for (std::size_t i = 0; i < n; ++i) edges[i] *= plane[i];
    out.uism += weight[c] * eme(edges, h, w);
  }

  // Contrast: block Michelson ratio r, summed as r log r on the intensity.
  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) gray[i] = weight[0] * p[i] + weight[1] * p[n + i] + weight[2] * p[2 * n + i];
  int ch = 0, cw = 0;
  const auto g = block_crop(gray, h, w, ch, cw);
  const int by = ch / kEmeBlock, bx = cw / kEmeBlock;
  double acc = 0;
  for (int j = 0; j < by; ++j) {
    for (int i = 0; i < bx; ++i) {
      double mx = g[static_cast<std::size_t>(j * kEmeBlock) * cw + i * kEmeBlock], mn = mx;
      for (int y = j * kEmeBlock; y < (j + 1) * kEmeBlock; ++y)
        for (int x = i * kEmeBlock; x < (i + 1) * kEmeBlock; ++x) {
          mx = std::max(mx, g[static_cast<std::size_t>(y) * cw + x]);
          mn = std::min(mn, g[static_cast<std::size_t>(y) * cw + x]);
        }
      const double top = mx - mn, bot = mx + mn;
      if (top > 0 && bot > 0) acc += (top / bot) * std::log(top / bot);
    }
  }
  out.uiconm = by * bx > 0 ? -acc / (by * bx) : 0.0;
  out.value = 0.0282 * out.uicm + 0.2953 * out.uism + 3.5753 * out.uiconm;
  return out;
}

double uiqm(const ImageTensor& img) { return uiqm_parts(img).value; }

EvalRow EvalReport::mean() const {
  EvalRow m;
  m.id = "mean";
  if (rows.empty()) return m;
  double p = 0, s = 0;
  for (const auto& r : rows) {
    m.uciqe += r.uciqe;
    m.uiqm += r.uiqm;
    if (full_reference) {
      p += r.psnr.value();
      s += r.ssim.value();
    }
  }
  const double n = static_cast<double>(rows.size());
  m.uciqe /= n;
  m.uiqm /= n;
  if (full_reference) {
    m.psnr = p / n;
    m.ssim = s / n;
  }
  return m;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << (full_reference ? "id,psnr,ssim,uciqe,uiqm\n" : "id,uciqe,uiqm\n");
  auto line = [&](const EvalRow& r) {
    out << r.id;
    if (full_reference) out << ',' << fmt(*r.psnr) << ',' << fmt(*r.ssim);
    out << ',' << fmt(r.uciqe) << ',' << fmt(r.uiqm) << '\n';
  };
  for (const auto& r : rows) line(r);
  line(mean());
  return out.str();
}

std::string EvalReport::to_json() const {
  auto obj = [&](const EvalRow& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    if (full_reference) {
      j["psnr"] = *r.psnr;
      j["ssim"] = *r.ssim;
    }
    j["uciqe"] = r.uciqe;
    j["uiqm"] = r.uiqm;
    return j;
  };
  nlohmann::ordered_json doc;
  doc["full_reference"] = full_reference;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) doc["rows"].push_back(obj(r));
  doc["mean"] = obj(mean());
  return doc.dump(2) + "\n";
}

EvalReport evaluate_images(const std::vector<std::pair<std::string, ImageTensor>>& preds,
                           const std::vector<ImageTensor>* refs) {
  if (preds.empty()) throw EvalEmptyError("no predictions to evaluate");
  if (refs && refs->size() != preds.size()) throw ShapeError("prediction and reference counts differ");
  EvalReport rep;
  rep.full_reference = refs != nullptr;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EvalRow r;
    r.id = preds[i].first;
    const auto& img = preds[i].second;
    if (refs) {
      r.psnr = psnr(img, (*refs)[i]);
      r.ssim = ssim(img, (*refs)[i]);
    }
    r.uciqe = uciqe(img);
    r.uiqm = uiqm(img);
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

EvalReport evaluate_dataset(const fs::path& pred_dir, const std::optional<fs::path>& ref_dir) {
  if (!fs::is_directory(pred_dir)) throw IoError("not a directory: " + pred_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  if (files.empty()) throw EvalEmptyError("no PNG images in " + pred_dir.string());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<std::string, ImageTensor>> preds;
  std::vector<ImageTensor> refs;
  for (const auto& f : files) {
    preds.emplace_back(f.stem().string(), read_image(f));
    if (ref_dir) {
      const auto r = *ref_dir / f.filename();
      if (!fs::exists(r)) throw IoError("missing reference " + r.string());
      refs.push_back(read_image(r));
    }
  }
  return evaluate_images(preds, ref_dir ? &refs : nullptr);
}

}  // namespace sucode
