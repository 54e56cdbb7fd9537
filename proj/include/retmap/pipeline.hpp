#pragma once

#include <filesystem>
#include <optional>

#include "retmap/eval.hpp"
#include "retmap/io.hpp"
#include "retmap/registration.hpp"

namespace retmap {

// A case directory loaded into memory. Stimulus/BOLD/deformation are
// optional; consumers error when a stage needs a missing piece.
struct LoadedCase {
  RetinotopicMap map;
  std::optional<Stimulus> stimulus;
  std::optional<BoldSeries> bold;
  std::optional<std::vector<Vec2>> deformation;
  CaseManifest manifest;
};

// Loads mesh/uv/prf (flattening when uv is absent), verifying manifest
// checksums for every file read.
LoadedCase load_case(const CaseDirectory& dir, bool require_uv = false);

struct PipelineOutputs {
  RegistrationResult registration;
  EvalReport report;
};

// End-to-end run: flatten (if needed) -> register -> apply -> evaluate ->
// report, writing the registered map, energy trace, report files, and four
// disk panels (raw/registered eccentricity and polar angle) under out_dir.
// Stage failures are wrapped in PipelineError; outputs of completed stages
// are left in place.
PipelineOutputs run_pipeline(const CaseDirectory& case_dir,
                             const CaseDirectory& template_dir,
                             const RegistrationConfig& config,
                             const EvalOptions& eval_options,
                             const std::filesystem::path& out_dir);

// Registration-stage outputs shared by the register and pipeline commands.
void write_registration_outputs(const std::filesystem::path& out_dir,
                                const RetinotopicMap& subject,
                                const RetinotopicMap& templ,
                                const RegistrationResult& result);

}  // namespace retmap
