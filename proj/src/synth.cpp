#include "sucode/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/kernels.hpp"

namespace sucode {

namespace fs = std::filesystem;

namespace {

enum class Texture { Flat, Stripes, Spots, Noise, Checker };

struct ClassStyle {
  std::array<float, 3> color;
  Texture texture;
};

constexpr std::array<ClassStyle, 8> kPalette{{
    {{0.40f, 0.62f, 0.70f}, Texture::Flat},     // water body (unused: gradient)
    {{0.12f, 0.12f, 0.16f}, Texture::Stripes},  // divers
    {{0.20f, 0.62f, 0.22f}, Texture::Noise},    // plants
    {{0.48f, 0.36f, 0.26f}, Texture::Checker},  // wrecks
    {{0.95f, 0.75f, 0.10f}, Texture::Flat},     // robots
    {{0.90f, 0.42f, 0.38f}, Texture::Spots},    // reefs
    {{0.96f, 0.55f, 0.12f}, Texture::Stripes},  // fish
    {{0.78f, 0.70f, 0.50f}, Texture::Noise},    // sea-floor
}};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

float hash_unit(std::uint64_t seed, int x, int y) {
  const auto h = mix(seed ^ mix(static_cast<std::uint64_t>(x) * 73856093ULL ^
                                static_cast<std::uint64_t>(y) * 19349663ULL));
  return static_cast<float>(h >> 11) * (1.0f / 9007199254740992.0f) * 2.0f - 1.0f;
}

// x, y are pixel coordinates divided by the texture scale.
float texture_value(Texture t, float x, float y, float phase, float freq, std::uint64_t seed) {
  const auto cell = [](float v, int size) { return static_cast<int>(std::floor(v / size)); };
  switch (t) {
    case Texture::Flat: return 0.0f;
    case Texture::Stripes: return std::sin((x + y * 0.5f) * freq + phase);
    case Texture::Spots: return std::sin(x * freq + phase) * std::sin(y * freq - phase) > 0.6f ? 1.0f : -0.3f;
    case Texture::Noise: return hash_unit(seed, cell(x, 2), cell(y, 2));
    case Texture::Checker: return ((cell(x, 4) + cell(y, 4)) % 2) ? 0.8f : -0.8f;
  }
  return 0.0f;
}

// 1-D Gaussian blur along both axes with mirror borders, channel-last float image.
void gaussian_blur(std::vector<float>& img, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> taps(2 * radius + 1);
  float sum = 0.0f;
  for (int i = -radius; i <= radius; ++i) sum += taps[i + radius] = std::exp(-(i * i) / (2.0f * sigma * sigma));
  for (auto& t : taps) t /= sum;
  auto mirror = [](int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - i - 1 : i); };
  std::vector<float> tmp(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * img[(y * w + mirror(x + k, w)) * 3 + c];
        tmp[(y * w + x) * 3 + c] = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp[(mirror(y + k, h) * w + x) * 3 + c];
        img[(y * w + x) * 3 + c] = acc;
      }
}

std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

}  // namespace

void DegradationParams::validate() const {
  for (double b : attenuation)
    if (b < 0) throw ConfigInvalid("attenuation");
  if (!(attenuation[0] >= attenuation[1] && attenuation[1] >= attenuation[2]))
    throw ConfigInvalid("attenuation must satisfy R >= G >= B");
  for (double b : backscatter)
    if (b < 0 || b > 1) throw ConfigInvalid("backscatter");
  if (depth_min < 0 || depth_max < depth_min) throw ConfigInvalid("depth range");
  if (blur_sigma < 0) throw ConfigInvalid("blur_sigma");
  if (noise_sigma < 0) throw ConfigInvalid("noise_sigma");
}

std::pair<ImageTensor, SemanticMask> generate_clean_scene(const SceneSpec& spec) {
  const int n = spec.canvas_size;
  if (n <= 0 || spec.object_count < 0 || spec.class_count < 1 || spec.class_count > 8 || !(spec.texture_scale > 0))
    throw ConfigInvalid("scene spec");
  std::mt19937_64 rng(mix(spec.seed));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  std::vector<float> img(static_cast<std::size_t>(n) * n * 3);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n) * n, 0);

  // Clear water: lighter at the top.
  const float tint = 0.9f + 0.2f * unit(rng);
  for (int y = 0; y < n; ++y) {
    const float t = n > 1 ? static_cast<float>(y) / (n - 1) : 0.0f;
    const std::array<float, 3> c{(0.50f - 0.18f * t) * tint, 0.74f - 0.20f * t, 0.82f - 0.20f * t};
    for (int x = 0; x < n; ++x)
      for (int k = 0; k < 3; ++k) img[(y * n + x) * 3 + k] = c[k];
  }

  const int draw = spec.class_count > 1 ? spec.object_count : 0;
  for (int o = 0; o < draw; ++o) {
    const int cls = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.class_count - 1));
    const int shape = static_cast<int>(rng() % 3);
    const float cx = unit(rng) * n;
    const float cy = unit(rng) * n;
    const float rx = n * (0.10f + 0.18f * unit(rng));
    const float ry = n * (0.10f + 0.18f * unit(rng));
    const float angle = unit(rng) * std::numbers::pi_v<float>;
    const float phase = unit(rng) * 6.28f;
    const float freq = 0.5f + 0.6f * unit(rng);
    const float shade = 0.85f + 0.3f * unit(rng);
    const std::uint64_t tex_seed = rng();
    const auto& style = kPalette[cls];
    const float ca = std::cos(angle), sa = std::sin(angle);

    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        const float u = (ca * dx + sa * dy) / rx;
        const float v = (-sa * dx + ca * dy) / ry;
        bool inside = false;
        if (shape == 0) inside = u * u + v * v <= 1.0f;
        else if (shape == 1) inside = std::abs(u) <= 0.8f && std::abs(v) <= 0.8f;
        else inside = v <= 0.7f && v >= -0.9f + 1.6f * std::abs(u);
        if (!inside) continue;
        labels[y * n + x] = cls;
        const float t =
            texture_value(style.texture, x / spec.texture_scale, y / spec.texture_scale, phase, freq, tex_seed);
        for (int k = 0; k < 3; ++k)
          img[(y * n + x) * 3 + k] = std::clamp(style.color[k] * shade * (1.0f + 0.18f * t), 0.0f, 1.0f);
      }
    }
  }

  auto image = torch::from_blob(img.data(), {n, n, 3}, torch::kFloat32).clone();
  auto mask = torch::from_blob(labels.data(), {n, n}, torch::kInt64).clone();
  return {ImageTensor(image), SemanticMask(mask, spec.class_count)};
}

torch::Tensor depth_field(const SemanticMask& mask, const DegradationParams& p, std::uint64_t seed) {
  const auto h = mask.height();
  const auto w = mask.width();
  const double span = p.depth_max - p.depth_min;
  std::mt19937_64 rng(mix(seed ^ 0xd3e7ULL));
  std::uniform_real_distribution<double> offset(0.15, 0.45);
  std::array<double, 256> pull{};
  for (auto& v : pull) v = offset(rng);

  auto d = torch::empty({h, w}, torch::kFloat64);
  auto* dp = d.data_ptr<double>();
  const auto* lp = mask.labels().data_ptr<std::int64_t>();
  for (std::int64_t y = 0; y < h; ++y) {
    const double t = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
    const double base = p.depth_max - span * t;
    for (std::int64_t x = 0; x < w; ++x) {
      const auto l = lp[y * w + x];
      const double closer = l == 0 ? 0.0 : pull[l % 256] * span;
      dp[y * w + x] = std::max(0.0, base - closer);
    }
  }
  return d;
}

ImageTensor apply_degradation(const ImageTensor& clean, const SemanticMask& mask,
                              const DegradationParams& p, std::uint64_t seed) {
  p.validate();
  if (clean.height() != mask.height() || clean.width() != mask.width())
    throw ShapeError("image and mask shapes differ");
  const int h = static_cast<int>(clean.height());
  const int w = static_cast<int>(clean.width());
  const auto depth = depth_field(mask, p, seed);
  const auto* dp = depth.data_ptr<double>();
  const auto* jp = clean.data().data_ptr<float>();

  std::vector<float> out(static_cast<std::size_t>(h) * w * 3);
  for (int i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double e = std::exp(-p.attenuation[c] * dp[i]);
      out[i * 3 + c] = static_cast<float>(jp[i * 3 + c] * e + p.backscatter[c] * (1.0 - e));
    }
  }
  gaussian_blur(out, h, w, p.blur_sigma);
  if (p.noise_sigma > 0.0) {
    std::mt19937_64 rng(mix(seed ^ 0x6e015eULL));
    std::normal_distribution<float> noise(0.0f, static_cast<float>(p.noise_sigma));
    for (auto& v : out) v += noise(rng);
  }
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return ImageTensor(torch::from_blob(out.data(), {h, w, 3}, torch::kFloat32).clone());
}

void write_dataset_manifest(const fs::path& root, const std::vector<DatasetManifestRow>& rows) {
  std::string text = "id,seed,erode_or_dilate_radius\n";
  for (const auto& r : rows) text += r.id + "," + std::to_string(r.seed) + "," + r.erode_or_dilate_radius + "\n";
  try {
    write_file_atomic(root / "manifest.csv", text);
  } catch (const IoError& e) {
    throw DatasetWriteError(e.what());
  }
}

std::vector<DatasetManifestRow> read_dataset_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.csv");
  if (!in) throw SampleInvalid("no manifest.csv in " + root.string());
  std::vector<DatasetManifestRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    DatasetManifestRow r;
    std::string seed;
    std::getline(ss, r.id, ',');
    std::getline(ss, seed, ',');
    std::getline(ss, r.erode_or_dilate_radius, ',');
    r.seed = std::stoull(seed);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<DatasetManifestRow> build_dataset(int count, const SceneSpec& spec, const DegradationParams& p,
                                              const fs::path& out_root) {
  p.validate();
  std::vector<DatasetManifestRow> rows;
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw DatasetWriteError("cannot create " + out_root.string() + ": " + ec.message());
  for (int i = 0; i < count; ++i) {
    DatasetManifestRow row{sample_id(i), mix(spec.seed * 1000003ULL + static_cast<std::uint64_t>(i)), "0"};
    SceneSpec s = spec;
    s.seed = row.seed;
    auto [clean, mask] = generate_clean_scene(s);
    auto raw = apply_degradation(clean, mask, p, row.seed);
    try {
      write_image(out_root / "raw" / (row.id + ".png"), raw);
      write_image(out_root / "ref" / (row.id + ".png"), clean);
      write_mask(out_root / "mask" / (row.id + ".png"), mask);
    } catch (const IoError& e) {
      throw DatasetWriteError(e.what());
    }
    rows.push_back(std::move(row));
  }
  write_dataset_manifest(out_root, rows);
  return rows;
}

SemanticMask perturb_mask(const SemanticMask& mask, std::pair<int, int> pixel_range, std::uint64_t seed) {
  auto [lo, hi] = pixel_range;
  if (lo < 0 || hi < lo) throw ConfigInvalid("pixel_range");
  if (hi == 0) return SemanticMask(mask.labels().clone());

  const int h = static_cast<int>(mask.height());
  const int w = static_cast<int>(mask.width());
  const auto* src = mask.labels().data_ptr<std::int64_t>();
  auto out_t = mask.labels().clone();
  auto* out = out_t.data_ptr<std::int64_t>();

  std::mt19937_64 rng(mix(seed ^ 0x9e7ULL));
  std::uniform_int_distribution<int> radius_dist(lo, hi);
  std::vector<int> component(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::uint8_t> region(component.size()), morphed(component.size());
  std::vector<int> stack;
  int next_id = 0;

  for (int start = 0; start < h * w; ++start) {
    if (src[start] == 0 || component[start] >= 0) continue;
    // Flood fill one 4-connected region of equal label.
    const auto label = src[start];
    const int id = next_id++;
    std::fill(region.begin(), region.end(), 0);
    stack.assign(1, start);
    component[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      region[p] = 1;
      const int y = p / w, x = p % w;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto [yy, xx] : nbr) {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int q = yy * w + xx;
        if (component[q] < 0 && src[q] == label) {
          component[q] = id;
          stack.push_back(q);
        }
      }
    }

    const bool erode = (rng() & 1ULL) == 0;
    const int r = radius_dist(rng);
    if (r == 0) continue;
    kernels::omp::morph_disk(region, h, w, r, erode, morphed);

    for (int p = 0; p < h * w; ++p) {
      if (!erode && morphed[p] && !region[p]) {
        out[p] = label;
      } else if (erode && region[p] && !morphed[p]) {
        // Nearest pixel outside the region supplies the fill label.
        const int y = p / w, x = p % w;
        std::int64_t fill = 0;
        int best = std::numeric_limits<int>::max();
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            const int d2 = dx * dx + dy * dy;
            if (d2 > r * r || d2 >= best || yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            if (!region[yy * w + xx]) {
              best = d2;
              fill = src[yy * w + xx];
            }
          }
        out[p] = fill;
      }
    }
  }
  return SemanticMask(out_t);
}

SemanticMask remap_mask_classes(const SemanticMask& mask, const std::map<int, int>& remap) {
  auto out = mask.labels().clone();
  auto* p = out.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    auto it = remap.find(static_cast<int>(p[i]));
    if (it == remap.end()) throw RemapInvalid("label " + std::to_string(p[i]) + " has no mapping");
    p[i] = it->second;
  }
  return SemanticMask(out);
}

std::map<int, int> class_merge_scheme(int target_classes) {
  switch (target_classes) {
    case 8: return {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 5}, {6, 6}, {7, 7}};
    // water | divers+robots | plants | wrecks | reefs+fish | sea-floor
    case 6: return {{0, 0}, {1, 1}, {4, 1}, {2, 2}, {3, 3}, {5, 4}, {6, 4}, {7, 5}};
    // water | divers+robots | plants+wrecks+sea-floor | reefs+fish
    case 4: return {{0, 0}, {1, 1}, {4, 1}, {2, 2}, {3, 2}, {7, 2}, {5, 3}, {6, 3}};
    default: throw RemapInvalid("no merge scheme for " + std::to_string(target_classes) + " classes");
  }
}

}  // namespace sucode
