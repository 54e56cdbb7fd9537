#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace retmap {

// Base error carrying a short machine-readable code alongside the message.
// The CLI prints failures as a single `stage=<s> code=<c> msg=<m>` line.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

private:
  std::string code_;
};

#define RETMAP_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                          \
  public:                                                              \
    explicit Name(const std::string& msg) : Error(#Name, msg) {}       \
  }

RETMAP_DEFINE_ERROR(NonManifoldEdge);
RETMAP_DEFINE_ERROR(MultipleComponents);
RETMAP_DEFINE_ERROR(InconsistentOrientation);
RETMAP_DEFINE_ERROR(NotADisk);
RETMAP_DEFINE_ERROR(SolverFailure);
RETMAP_DEFINE_ERROR(DegenerateSourceFace);
RETMAP_DEFINE_ERROR(ConformalSingularity);
RETMAP_DEFINE_ERROR(ConstraintInsufficient);
RETMAP_DEFINE_ERROR(MuOutOfRange);
RETMAP_DEFINE_ERROR(NoProgress);
RETMAP_DEFINE_ERROR(SigmaNonPositive);
RETMAP_DEFINE_ERROR(DegenerateSeries);
RETMAP_DEFINE_ERROR(EmptyVertexSet);
RETMAP_DEFINE_ERROR(UnknownFormat);
RETMAP_DEFINE_ERROR(IoError);
RETMAP_DEFINE_ERROR(ParseError);
RETMAP_DEFINE_ERROR(ChecksumMismatch);
RETMAP_DEFINE_ERROR(InvalidMesh);
RETMAP_DEFINE_ERROR(InvalidArgument);

#undef RETMAP_DEFINE_ERROR

// Wraps any error with the pipeline stage that raised it.
class PipelineError : public Error {
public:
  PipelineError(std::string stage, const std::string& code, const std::string& msg)
      : Error(code, msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

}  // namespace retmap
