#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sucode/config.hpp"
#include "sucode/metrics.hpp"

namespace sucode {

/// Everything one ablation sweep shares: the base config, a training split
/// with masks, a test split with references, and a scratch directory.
struct AblationSetup {
  RunConfig cfg;
  std::filesystem::path train_root;
  std::filesystem::path test_root;
  std::filesystem::path work_dir;
};

/// One evaluation report per setting, in sweep order.
struct AblationTable {
  std::string parameter;  // column title of the setting
  std::vector<std::string> settings;
  std::vector<EvalReport> reports;

  /// `<parameter>,psnr,ssim,uciqe,uiqm`, one mean row per setting.
  std::string to_csv() const;
  std::string to_json() const;
};

/// Three training stages on `train_root`, then enhancement and full-reference
/// evaluation of `test_root`. Stage checkpoints land in work_dir/stage{1,2,3},
/// enhanced images in work_dir/enhanced.
EvalReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& train_root,
                        const std::filesystem::path& test_root, const std::filesystem::path& work_dir);

/// Sweeps (entries N, code width n_z) pairs.
AblationTable ablate_codebook_size(const AblationSetup& s, const std::vector<std::pair<int, int>>& grid);

/// Retrains on copies of the training split whose masks are randomly eroded
/// or dilated by radii drawn from each range; (0, 0) keeps the masks.
AblationTable ablate_mask(const AblationSetup& s, const std::vector<std::pair<int, int>>& ranges);

/// Retrains with the 8 categories merged down to each target count.
AblationTable ablate_classes(const AblationSetup& s, const std::vector<int>& targets);

/// "0" -> (0, 0), "1-5" -> (1, 5). Throws ConfigInvalid.
std::pair<int, int> parse_pixel_range(const std::string& text);

}  // namespace sucode
