#include "sucode/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <sstream>

#include "sucode/errors.hpp"
#include "sucode/log.hpp"
#include "sucode/synth.hpp"
#include "sucode/trainer.hpp"

namespace fs = std::filesystem;

namespace sucode {

namespace {

std::uint64_t perturb_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string range_label(std::pair<int, int> r) {
  return r.first == 0 && r.second == 0 ? "0" : std::to_string(r.first) + "-" + std::to_string(r.second);
}

std::vector<std::string> sorted_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Copy of a training split with every mask perturbed; raw and ref are untouched.
void write_perturbed_split(const fs::path& from, const fs::path& to, std::pair<int, int> range, std::uint64_t seed) {
  for (const char* sub : {"raw", "ref", "mask"}) fs::create_directories(to / sub);
  const auto ids = sorted_ids(from / "raw");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto name = ids[i] + ".png";
    for (const char* sub : {"raw", "ref"})
      if (fs::exists(from / sub / name))
        fs::copy_file(from / sub / name, to / sub / name, fs::copy_options::overwrite_existing);
    write_mask(to / "mask" / name, perturb_mask(read_mask(from / "mask" / name), range, perturb_seed(seed, i)));
  }
  if (fs::exists(from / "manifest.csv")) {
    auto rows = read_dataset_manifest(from);
    for (auto& r : rows) r.erode_or_dilate_radius = range_label(range);
    write_dataset_manifest(to, rows);
  }
}

std::string slug(std::string s) {
  for (auto& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

}  // namespace

EvalReport run_pipeline(const RunConfig& cfg, const fs::path& train_root, const fs::path& test_root,
                        const fs::path& work_dir) {
  std::optional<fs::path> prev;
  std::optional<CheckpointBundle> last;
  for (int stage = 1; stage <= 3; ++stage) {
    const auto out = work_dir / ("stage" + std::to_string(stage));
    last = run_stage(stage, cfg, train_root, prev, out);
    prev = out;
  }

  Enhancer enhancer(*last);
  RunConfig test_cfg = cfg;
  test_cfg.class_remap.clear();
  const Dataset test(test_root, test_cfg, LoadMode::Test, false, true);
  if (test.size() == 0) throw EvalEmptyError("no test images in " + test_root.string());
  fs::create_directories(work_dir / "enhanced");
  std::vector<std::pair<std::string, ImageTensor>> preds;
  std::vector<ImageTensor> refs;
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto s = test.get(i, 0);
    auto y = enhancer.enhance(s.raw);
    write_image(work_dir / "enhanced" / (s.id + ".png"), y);
    preds.emplace_back(s.id, std::move(y));
    refs.push_back(*s.reference);
  }
  auto report = evaluate_images(preds, &refs);
  write_file_atomic(work_dir / "eval.csv", report.to_csv());
  return report;
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << parameter << ",psnr,ssim,uciqe,uiqm\n";
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const auto m = reports[i].mean();
    out << settings[i] << ',' << *m.psnr << ',' << *m.ssim << ',' << m.uciqe << ',' << m.uiqm << '\n';
  }
  return out.str();
}

std::string AblationTable::to_json() const {
  nlohmann::ordered_json doc;
  doc["parameter"] = parameter;
  doc["rows"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const auto m = reports[i].mean();
    doc["rows"].push_back({{"setting", settings[i]}, {"psnr", *m.psnr}, {"ssim", *m.ssim}, {"uciqe", m.uciqe},
                           {"uiqm", m.uiqm}});
  }
  return doc.dump(2) + "\n";
}

AblationTable ablate_codebook_size(const AblationSetup& s, const std::vector<std::pair<int, int>>& grid) {
  AblationTable t;
  t.parameter = "codebook";
  for (const auto& [entries, dim] : grid) {
    RunConfig cfg = s.cfg;
    cfg.codebook_entries = entries;
    cfg.embed_dim = dim;
    const auto label = std::to_string(entries) + "x" + std::to_string(dim);
    log::info("ablation codebook ", label);
    t.settings.push_back(label);
    t.reports.push_back(run_pipeline(cfg, s.train_root, s.test_root, s.work_dir / ("codebook_" + label)));
  }
  return t;
}

AblationTable ablate_mask(const AblationSetup& s, const std::vector<std::pair<int, int>>& ranges) {
  AblationTable t;
  t.parameter = "mask_range";
  for (const auto& r : ranges) {
    if (r.first < 0 || r.second < r.first) throw ConfigInvalid("pixel range " + range_label(r));
    const auto label = range_label(r);
    const auto dir = s.work_dir / ("mask_" + slug(label));
    log::info("ablation mask range ", label);
    write_perturbed_split(s.train_root, dir / "data", r, s.cfg.seed);
    t.settings.push_back(label);
    t.reports.push_back(run_pipeline(s.cfg, dir / "data", s.test_root, dir));
  }
  return t;
}

AblationTable ablate_classes(const AblationSetup& s, const std::vector<int>& targets) {
  AblationTable t;
  t.parameter = "classes";
  for (int target : targets) {
    RunConfig cfg = s.cfg;
    cfg.class_remap = class_merge_scheme(target);
    cfg.class_count = target;
    log::info("ablation classes ", target);
    t.settings.push_back(std::to_string(target));
    t.reports.push_back(run_pipeline(cfg, s.train_root, s.test_root, s.work_dir / ("classes_" + std::to_string(target))));
  }
  return t;
}

std::pair<int, int> parse_pixel_range(const std::string& text) {
  try {
    std::size_t used = 0;
    const auto dash = text.find('-');
    if (dash == std::string::npos) {
      const int v = std::stoi(text, &used);
      if (used != text.size() || v < 0) throw ConfigInvalid(text);
      return {v, v};
    }
    const int lo = std::stoi(text.substr(0, dash), &used);
    if (used != dash) throw ConfigInvalid(text);
    const auto rest = text.substr(dash + 1);
    const int hi = std::stoi(rest, &used);
    if (used != rest.size() || lo < 0 || hi < lo) throw ConfigInvalid(text);
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ConfigInvalid("pixel range must look like 0 or 1-5, got '" + text + "'");
  } catch (const ConfigInvalid&) {
    throw ConfigInvalid("pixel range must look like 0 or 1-5, got '" + text + "'");
  }
}

}  // namespace sucode
