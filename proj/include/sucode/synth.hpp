#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sucode/image.hpp"

namespace sucode {

/// SUIM category order; the id equals the SUIM RGB bit code.
inline constexpr std::array<std::string_view, 8> kClassNames{
    "water body",         "human divers",         "aquatic plants",      "wrecks",
    "underwater robots",  "reefs & invertebrates", "fish & vertebrates", "sea-floor & rocks"};

struct SceneSpec {
  int canvas_size = 64;
  int object_count = 3;
  int class_count = 8;  // labels drawn from {0, ..., class_count - 1}
  std::uint64_t seed = 0;
  float texture_scale = 1.0f;  // object texture features are this many times larger
};

/// I = J * exp(-beta * d) + B * (1 - exp(-beta * d)), then blur and noise.
struct DegradationParams {
  std::array<double, 3> attenuation{0.45, 0.18, 0.10};  // 1/m, R >= G >= B
  std::array<double, 3> backscatter{0.05, 0.30, 0.38};
  double depth_min = 1.0;  // m
  double depth_max = 3.0;  // m
  double blur_sigma = 0.6;   // px
  double noise_sigma = 0.01;

  void validate() const;
};

std::pair<ImageTensor, SemanticMask> generate_clean_scene(const SceneSpec& spec);

/// Depth map in meters: vertical gradient (far at the top) with foreground
/// labels pulled closer by a per-label offset. Constant when depth_min == depth_max.
torch::Tensor depth_field(const SemanticMask& mask, const DegradationParams& p, std::uint64_t seed);

ImageTensor apply_degradation(const ImageTensor& clean, const SemanticMask& mask,
                              const DegradationParams& p, std::uint64_t seed);

struct DatasetManifestRow {
  std::string id;
  std::uint64_t seed = 0;
  std::string erode_or_dilate_radius = "0";
};

/// Writes `count` triplets as <root>/{raw,mask,ref}/<id>.png plus
/// <root>/manifest.csv. Throws DatasetWriteError on IO failure.
std::vector<DatasetManifestRow> build_dataset(int count, const SceneSpec& spec,
                                              const DegradationParams& p,
                                              const std::filesystem::path& out_root);

std::vector<DatasetManifestRow> read_dataset_manifest(const std::filesystem::path& root);
void write_dataset_manifest(const std::filesystem::path& root,
                            const std::vector<DatasetManifestRow>& rows);

/// Each foreground 4-connected region is independently eroded or dilated
/// (fair coin) by a disk whose radius is uniform in [min_px, max_px].
/// Eroded pixels take the label of the nearest pixel outside the region.
SemanticMask perturb_mask(const SemanticMask& mask, std::pair<int, int> pixel_range,
                          std::uint64_t seed);

/// Substitutes labels; every label present must be mapped (RemapInvalid otherwise).
SemanticMask remap_mask_classes(const SemanticMask& mask, const std::map<int, int>& remap);

/// Category merge schemes over the 8 SUIM classes: 8 (identity),
/// 6 (reefs+fish, divers+robots) and 4 (additionally plants+wrecks+sea-floor).
std::map<int, int> class_merge_scheme(int target_classes);

}  // namespace sucode
