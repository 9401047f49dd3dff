#pragma once

#include <stdexcept>
#include <string>

namespace sucode {

// Base for every domain error. name() is the stable identifier printed by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define SUCODE_DEFINE_ERROR(Name)                                              \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(#Name, what) {}             \
  };

SUCODE_DEFINE_ERROR(ConfigNotFound)
SUCODE_DEFINE_ERROR(ConfigInvalid)
SUCODE_DEFINE_ERROR(SampleInvalid)
SUCODE_DEFINE_ERROR(CheckpointCorrupt)
SUCODE_DEFINE_ERROR(CheckpointIncomplete)
SUCODE_DEFINE_ERROR(DatasetWriteError)
SUCODE_DEFINE_ERROR(RemapInvalid)
SUCODE_DEFINE_ERROR(MaskInvalid)
SUCODE_DEFINE_ERROR(AggregateInvalid)
SUCODE_DEFINE_ERROR(ShapeError)
SUCODE_DEFINE_ERROR(LossSpecError)
SUCODE_DEFINE_ERROR(StagePrereqError)
SUCODE_DEFINE_ERROR(TrainingDiverged)
SUCODE_DEFINE_ERROR(EvalEmptyError)
SUCODE_DEFINE_ERROR(IoError)

#undef SUCODE_DEFINE_ERROR

}  // namespace sucode
