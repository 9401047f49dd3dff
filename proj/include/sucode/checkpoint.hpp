#pragma once

#include <torch/types.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sucode/config.hpp"

namespace sucode {

struct ManifestEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string dtype;  // float32 | float64 | int64
  bool frozen = false;
  int stage_of_origin = 0;
};

/// Named-array archive with a plain-text manifest.
///
/// On disk this is a directory:
///   manifest.txt       `name,shape,dtype,frozen,stage_of_origin` rows, shape as `2x3`
///   arrays/<name>.bin  small header (magic, dtype, rank, dims) + little-endian payload
///   config.yaml        snapshot of the RunConfig
///   rng_state.bin      opaque bytes
struct CheckpointBundle {
  std::vector<ManifestEntry> manifest;
  std::map<std::string, torch::Tensor> arrays;
  RunConfig config_snapshot;
  std::string rng_state;

  /// Inserts or replaces an array; the manifest entry mirrors its shape.
  void put(const std::string& name, const torch::Tensor& array, bool frozen, int stage_of_origin);
  bool contains(const std::string& name) const { return arrays.count(name) != 0; }
  const torch::Tensor& at(const std::string& name) const;
  const ManifestEntry& entry(const std::string& name) const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  /// Throws CheckpointCorrupt if any entry lacks its array or disagrees on shape/dtype.
  void validate() const;
};

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& dir);
CheckpointBundle load_checkpoint(const std::filesystem::path& dir);

std::string dtype_name(torch::ScalarType t);

}  // namespace sucode
