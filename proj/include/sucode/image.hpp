#pragma once

#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sucode/config.hpp"

namespace sucode {

/// RGB image, float32 [H, W, 3], values in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  /// Validates shape, dtype (converted to float32), finiteness and range.
  explicit ImageTensor(torch::Tensor hwc);

  static ImageTensor filled(std::int64_t height, std::int64_t width, float r, float g, float b);

  std::int64_t height() const { return data_.size(0); }
  std::int64_t width() const { return data_.size(1); }
  bool empty() const { return !data_.defined(); }
  const torch::Tensor& data() const { return data_; }

  /// [1, 3, H, W] view for the networks.
  torch::Tensor to_batch() const;
  /// Picks sample `index` of a [B, 3, H, W] tensor; values clamped to [0, 1].
  static ImageTensor from_batch(const torch::Tensor& bchw, std::int64_t index = 0);

 private:
  torch::Tensor data_;
};

/// Per-pixel class ids, int64 [H, W].
class SemanticMask {
 public:
  SemanticMask() = default;
  /// Labels must be >= 0; with class_count > 0 also < class_count.
  explicit SemanticMask(torch::Tensor labels, int class_count = 0);

  std::int64_t height() const { return labels_.size(0); }
  std::int64_t width() const { return labels_.size(1); }
  bool empty() const { return !labels_.defined(); }
  const torch::Tensor& labels() const { return labels_; }
  std::int64_t max_label() const;
  /// Sorted distinct labels.
  std::vector<std::int64_t> label_set() const;

 private:
  torch::Tensor labels_;
};

struct PairedSample {
  ImageTensor raw;
  std::optional<ImageTensor> reference;
  std::optional<SemanticMask> mask;
  std::string id;
};

enum class LoadMode { Train, Test };

ImageTensor read_image(const std::filesystem::path& path);
/// 8-bit RGB PNG, written to a temp file and renamed into place.
void write_image(const std::filesystem::path& path, const ImageTensor& img);

/// Single-channel indexed raster (palette index or gray value = class id).
SemanticMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const SemanticMask& mask);

/// SUIM-style color coding: each of R, G, B thresholded at 0.5 gives one bit,
/// id = 4R + 2G + B (black = water body = 0, white = sea-floor & rocks = 7).
SemanticMask rgb_mask_to_ids(const ImageTensor& rgb);

/// Loads and validates one sample. Train mode random-crops to image_size
/// (offset drawn from crop_seed); test mode rescales directly. The class remap
/// of the config is applied to the mask before the label bound check.
PairedSample load_pair(const std::filesystem::path& image_path,
                       const std::optional<std::filesystem::path>& mask_path,
                       const std::optional<std::filesystem::path>& ref_path, const RunConfig& cfg,
                       LoadMode mode = LoadMode::Test, std::uint64_t crop_seed = 0);

/// Writes bytes to `path` via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sucode
