#pragma once

#include <torch/torch.h>

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sucode/checkpoint.hpp"
#include "sucode/config.hpp"
#include "sucode/losses.hpp"
#include "sucode/networks.hpp"
#include "sucode/quantizer.hpp"

namespace sucode {

/// Component names as they appear in checkpoints and stage plans.
inline const std::vector<std::string> kComponents{"enc_q", "dec_q", "codebook", "enc_r", "wpred", "dec_r",
                                                  "gcam",  "dec_e", "faff",     "disc",  "enc_r_ref"};

/// Which components a stage trains and which it must leave untouched.
struct StagePlan {
  int stage = 1;
  std::set<std::string> trainable;
  std::set<std::string> frozen;

  static StagePlan for_stage(int stage, bool freeze_enc_r_stage3 = false);
  bool trains(const std::string& component) const { return trainable.count(component) != 0; }
};

/// A parameter tensor with its checkpoint name and owning component.
struct NamedArray {
  std::string component;
  std::string name;
  torch::Tensor tensor;  // aliases the live parameter
};

/// Every network of the pipeline, built from one config.
class SucodeModel {
 public:
  /// Parameters are drawn from the global torch generator; seed it first.
  explicit SucodeModel(const RunConfig& cfg);

  RunConfig cfg;
  Encoder enc_q{nullptr}, enc_r{nullptr}, enc_r_ref{nullptr};
  Decoder dec_q{nullptr}, dec_r{nullptr}, dec_e{nullptr};
  WeightPredictor wpred{nullptr};
  Discriminator disc{nullptr};
  CodebookSet books;
  PerceptualExtractor phi{nullptr};

  std::vector<NamedArray> arrays(const std::string& component) const;
  std::vector<NamedArray> all_arrays() const;
  std::vector<torch::Tensor> parameters_of(const std::set<std::string>& components) const;

  /// Copies every array of `bundle` whose name this model knows. Returns the
  /// components that were fully present. Throws CheckpointCorrupt on shape mismatch.
  std::set<std::string> import_from(const CheckpointBundle& bundle);

  /// Writes the given components into `bundle`, marking frozen ones.
  void export_to(CheckpointBundle& bundle, const std::set<std::string>& components, const StagePlan& plan,
                 const std::map<std::string, int>& stage_of_origin) const;

  /// Copies parameters between modules where names and shapes agree.
  /// Returns how many tensors were copied.
  static int copy_matching(const torch::nn::Module& from, torch::nn::Module& to);

  /// Fresh discriminator weights drawn from a private seed.
  void reset_discriminator(std::uint64_t seed);

  void set_requires_grad(const StagePlan& plan);
  void train(bool on);
};

}  // namespace sucode
