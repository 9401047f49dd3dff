#include "sucode/image.hpp"

#include <png.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>

#include "sucode/errors.hpp"
#include "sucode/synth.hpp"

namespace sucode {

namespace fs = std::filesystem;

ImageTensor::ImageTensor(torch::Tensor hwc) {
  if (hwc.dim() != 3 || hwc.size(2) != 3) throw ShapeError("image must be [H, W, 3]");
  data_ = hwc.to(torch::kFloat32).contiguous();
  if (!torch::isfinite(data_).all().item<bool>()) throw SampleInvalid("image has non-finite values");
  if (data_.numel() > 0 && (data_.min().item<float>() < 0.f || data_.max().item<float>() > 1.f))
    throw SampleInvalid("image values outside [0, 1]");
}

ImageTensor ImageTensor::filled(std::int64_t height, std::int64_t width, float r, float g, float b) {
  auto t = torch::empty({height, width, 3});
  t.select(2, 0).fill_(r);
  t.select(2, 1).fill_(g);
  t.select(2, 2).fill_(b);
  return ImageTensor(t);
}

torch::Tensor ImageTensor::to_batch() const { return data_.permute({2, 0, 1}).unsqueeze(0).contiguous(); }

ImageTensor ImageTensor::from_batch(const torch::Tensor& bchw, std::int64_t index) {
  auto t = bchw.index({index}).detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0});
  return ImageTensor(t.contiguous());
}

SemanticMask::SemanticMask(torch::Tensor labels, int class_count) {
  if (labels.dim() != 2) throw ShapeError("mask must be [H, W]");
  labels_ = labels.to(torch::kInt64).contiguous();
  if (labels_.numel() == 0) return;
  if (labels_.min().item<std::int64_t>() < 0) throw SampleInvalid("negative mask label");
  if (class_count > 0 && labels_.max().item<std::int64_t>() >= class_count)
    throw SampleInvalid("mask label " + std::to_string(labels_.max().item<std::int64_t>()) +
                        " >= class count " + std::to_string(class_count));
}

std::int64_t SemanticMask::max_label() const {
  return labels_.numel() ? labels_.max().item<std::int64_t>() : 0;
}

std::vector<std::int64_t> SemanticMask::label_set() const {
  auto u = std::get<0>(torch::_unique(labels_.flatten(), /*sorted=*/true));
  return std::vector<std::int64_t>(u.data_ptr<std::int64_t>(), u.data_ptr<std::int64_t>() + u.numel());
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

ImageTensor read_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image " + path.string());
  double scale = 1.0;
  switch (m.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw SampleInvalid("unsupported bit depth in " + path.string());
  }
  cv::Mat rgb;
  switch (m.channels()) {
    case 1: cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw SampleInvalid("unsupported channel count in " + path.string());
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, scale);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
  return ImageTensor(t);
}

void write_image(const fs::path& path, const ImageTensor& img) {
  auto bytes_t = (img.data() * 255.0f).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat rgb(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3,
              bytes_t.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", bgr, buf)) throw IoError("png encode failed for " + path.string());
  write_file_atomic(path, std::string(buf.begin(), buf.end()));
}

namespace {

// libpng keeps palette indices intact, which the OpenCV loader expands to BGR.
std::optional<SemanticMask> read_png_indices(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot read mask " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) return std::nullopt;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw SampleInvalid("corrupt png mask " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_png(png, info, PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_16, nullptr);
  const auto width = static_cast<std::int64_t>(png_get_image_width(png, info));
  const auto height = static_cast<std::int64_t>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw SampleInvalid("mask " + path.string() +
                        " is not single-channel; convert color masks with rgb_mask_to_ids");
  }
  auto labels = torch::empty({height, width}, torch::kInt64);
  auto* dst = labels.data_ptr<std::int64_t>();
  png_bytepp rows = png_get_rows(png, info);
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) dst[y * width + x] = rows[y][x];
  png_destroy_read_struct(&png, &info, nullptr);
  return SemanticMask(labels);
}

}  // namespace

SemanticMask read_mask(const fs::path& path) {
  if (auto m = read_png_indices(path)) return *m;
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read mask " + path.string());
  if (m.channels() != 1)
    throw SampleInvalid("mask " + path.string() +
                        " is not single-channel; convert color masks with rgb_mask_to_ids");
  cv::Mat l;
  m.convertTo(l, CV_32S);
  auto t = torch::from_blob(l.data, {l.rows, l.cols}, torch::kInt32).to(torch::kInt64);
  return SemanticMask(t);
}

void write_mask(const fs::path& path, const SemanticMask& mask) {
  if (mask.max_label() > 255) throw SampleInvalid("mask labels exceed 8 bits");
  auto bytes_t = mask.labels().to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(mask.height()), static_cast<int>(mask.width()), CV_8UC1,
               bytes_t.data_ptr<std::uint8_t>());
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", gray, buf)) throw IoError("png encode failed for " + path.string());
  write_file_atomic(path, std::string(buf.begin(), buf.end()));
}

SemanticMask rgb_mask_to_ids(const ImageTensor& rgb) {
  auto bits = (rgb.data() >= 0.5f).to(torch::kInt64);
  auto ids = bits.select(2, 0) * 4 + bits.select(2, 1) * 2 + bits.select(2, 2);
  return SemanticMask(ids.contiguous(), 8);
}

namespace {

cv::Mat as_mat(const torch::Tensor& t, int type) {
  return cv::Mat(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), type, t.data_ptr());
}

torch::Tensor resize_image(const torch::Tensor& hwc, int size) {
  auto src = hwc.contiguous();
  cv::Mat out;
  const bool shrink = src.size(0) >= size && src.size(1) >= size;
  cv::resize(as_mat(src, CV_32FC3), out, cv::Size(size, size), 0, 0,
             shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  return torch::from_blob(out.data, {size, size, 3}, torch::kFloat32).clone().clamp(0.0, 1.0);
}

torch::Tensor resize_labels(const torch::Tensor& hw, int size) {
  auto src = hw.to(torch::kInt32).contiguous();
  cv::Mat out;
  cv::resize(as_mat(src, CV_32SC1), out, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  return torch::from_blob(out.data, {size, size}, torch::kInt32).to(torch::kInt64);
}

}  // namespace

PairedSample load_pair(const fs::path& image_path, const std::optional<fs::path>& mask_path,
                       const std::optional<fs::path>& ref_path, const RunConfig& cfg, LoadMode mode,
                       std::uint64_t crop_seed) {
  PairedSample s;
  s.id = image_path.stem().string();
  auto raw = read_image(image_path).data();
  std::optional<torch::Tensor> ref;
  std::optional<torch::Tensor> mask;
  if (ref_path) ref = read_image(*ref_path).data();
  if (mask_path) {
    auto m = read_mask(*mask_path);
    if (!cfg.class_remap.empty()) m = remap_mask_classes(m, cfg.class_remap);
    mask = m.labels();
  }
  const auto h = raw.size(0);
  const auto w = raw.size(1);
  if (mask && (mask->size(0) != h || mask->size(1) != w))
    throw SampleInvalid("mask shape does not match image for " + s.id);
  if (ref && (ref->size(0) != h || ref->size(1) != w))
    throw SampleInvalid("reference shape does not match image for " + s.id);

  const int size = cfg.image_size;
  if (h != size || w != size) {
    if (mode == LoadMode::Train && h >= size && w >= size) {
      std::mt19937_64 rng(crop_seed);
      const auto y0 = std::uniform_int_distribution<std::int64_t>(0, h - size)(rng);
      const auto x0 = std::uniform_int_distribution<std::int64_t>(0, w - size)(rng);
      using torch::indexing::Slice;
      auto crop = [&](const torch::Tensor& t) {
        return t.index({Slice(y0, y0 + size), Slice(x0, x0 + size)}).contiguous();
      };
      raw = crop(raw);
      if (ref) ref = crop(*ref);
      if (mask) mask = crop(*mask);
    } else {
      raw = resize_image(raw, size);
      if (ref) ref = resize_image(*ref, size);
      if (mask) mask = resize_labels(*mask, size);
    }
  }
  s.raw = ImageTensor(raw);
  if (ref) s.reference = ImageTensor(*ref);
  if (mask) s.mask = SemanticMask(*mask, cfg.class_count);
  return s;
}

}  // namespace sucode
