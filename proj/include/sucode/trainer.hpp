#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sucode/checkpoint.hpp"
#include "sucode/config.hpp"
#include "sucode/image.hpp"
#include "sucode/losses.hpp"
#include "sucode/model.hpp"

namespace sucode {

/// Samples of one dataset root (`raw/`, `mask/`, `ref/`), ids sorted.
class Dataset {
 public:
  Dataset(const std::filesystem::path& root, const RunConfig& cfg, LoadMode mode, bool need_mask, bool need_ref);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::filesystem::path& root() const { return root_; }

  /// Sample i; in train mode the crop offset is a function of (seed, epoch, i).
  PairedSample get(std::size_t i, std::int64_t epoch) const;

  struct Batch {
    torch::Tensor raw;   // [B, 3, H, W]
    torch::Tensor ref;   // [B, 3, H, W] or undefined
    torch::Tensor mask;  // [B, H, W] int64 or undefined
  };
  Batch batch(const std::vector<std::size_t>& indices, std::int64_t epoch) const;

 private:
  std::filesystem::path root_;
  RunConfig cfg_;
  LoadMode mode_;
  bool need_mask_, need_ref_;
  std::vector<std::string> ids_;
  mutable std::vector<std::optional<PairedSample>> cache_;  // samples that never get cropped
  std::vector<bool> cacheable_;
};

/// Per-step metrics log, `step,stage,pixel,...,total`.
class MetricsLog {
 public:
  static constexpr const char* kHeader = "step,stage,pixel,perceptual,adversarial,vq_commit,vq_codebook,vq_semantic,code,total";
  MetricsLog(const std::filesystem::path& path, bool append);
  void write(std::int64_t step, int stage, const LossReport& r);

 private:
  std::ofstream out_;
};

/// One stage of optimization over a dataset.
class Trainer {
 public:
  /// `init` is the predecessor stage checkpoint, or a checkpoint of this same
  /// stage to resume from.
  Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data, const std::optional<CheckpointBundle>& init);

  /// One generator update followed by one discriminator update.
  LossReport step();
  /// Runs until `n` more steps are done or the stage is complete.
  void run(std::int64_t n);

  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  bool finished() const { return step_ >= total_steps_; }
  const std::vector<LossReport>& history() const { return history_; }
  const StagePlan& plan() const { return plan_; }
  SucodeModel& model() { return *model_; }

  CheckpointBundle checkpoint() const;
  void set_metrics_log(std::shared_ptr<MetricsLog> log) { log_ = std::move(log); }
  /// Where the last good state is written if the loss turns non-finite.
  void set_failure_dir(std::filesystem::path dir) { failure_dir_ = std::move(dir); }

 private:
  LossComponents forward_stage(const Dataset::Batch& b, torch::Tensor& fake, torch::Tensor& real);
  std::vector<std::pair<std::string, torch::Tensor>> optim_params(bool generator) const;
  void restore_optimizer(const CheckpointBundle& b);
  const std::vector<std::size_t>& epoch_order(std::int64_t epoch);

  RunConfig cfg_;
  StagePlan plan_;
  std::shared_ptr<const Dataset> data_;
  std::unique_ptr<SucodeModel> model_;
  std::set<std::string> present_;
  std::map<std::string, int> origin_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  std::int64_t step_ = 0, total_steps_ = 0, steps_per_epoch_ = 1;
  std::int64_t order_epoch_ = -1;
  std::vector<std::size_t> order_;
  std::vector<LossReport> history_;
  LossReport epoch_sum_;
  std::shared_ptr<MetricsLog> log_;
  std::optional<std::filesystem::path> failure_dir_;
};

/// Trains one stage end to end and saves the checkpoint in `out_dir`.
/// Throws StagePrereqError when stage >= 2 lacks its predecessor checkpoint.
CheckpointBundle run_stage(int stage, RunConfig cfg, const std::filesystem::path& dataset_root,
                           const std::optional<std::filesystem::path>& init_from,
                           const std::filesystem::path& out_dir);

/// Stage-3 inference: E_r, per-class quantization, weighting, frozen G_r taps, G_e.
class Enhancer {
 public:
  /// Throws CheckpointIncomplete when a stage-3 component is missing.
  explicit Enhancer(const CheckpointBundle& ckpt);
  ImageTensor enhance(const ImageTensor& raw);
  /// [B, 3, H, W] in, [B, 3, H, W] clamped to [0, 1] out. H, W must be
  /// multiples of the downsampling factor.
  torch::Tensor enhance_batch(const torch::Tensor& raw);
  SucodeModel& model() { return *model_; }

 private:
  std::unique_ptr<SucodeModel> model_;
};

ImageTensor enhance(const ImageTensor& raw, const CheckpointBundle& ckpt);

/// Stage-1 reconstruction of x under its mask, clamped to [0, 1].
torch::Tensor reconstruct_stage1(SucodeModel& model, const torch::Tensor& x, const torch::Tensor& mask);

struct CostReport {
  std::int64_t params = 0;
  std::int64_t mult_adds = 0;
};

/// Parameter count of every network array in the checkpoint and multiply-adds
/// of its deepest runnable path (enhancement, stage-2 or stage-1 reconstruction)
/// on one square input of side `input_size`.
CostReport count_cost(const CheckpointBundle& ckpt, int input_size);

/// Bundle rebuilt from its config snapshot. Throws CheckpointIncomplete
/// when any of `required` components is absent.
std::unique_ptr<SucodeModel> model_from_checkpoint(const CheckpointBundle& ckpt,
                                                    const std::set<std::string>& required);

}  // namespace sucode
