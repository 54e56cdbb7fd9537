#pragma once

#include <optional>
#include <string>
#include <vector>

#include "retmap/prf.hpp"
#include "retmap/registration.hpp"

namespace retmap {

enum class DvWeighting { None, R2 };

struct EvalRow {
  std::string method_label;
  double d_v = 0.0;
  long f_flip = 0;
  double rmse_raw = 0.0, rmse_reg = 0.0;
  double pc_raw = 0.0, pc_reg = 0.0;
  double aic_raw = 0.0, aic_reg = 0.0;
};

struct VertexDetail {
  int vertex = 0;
  bool included = false;
  double dv_raw = 0.0, dv_reg = 0.0;
  double rmse_raw = 0.0, rmse_reg = 0.0;
  double pc_raw = 0.0, pc_reg = 0.0;
  double aic_raw = 0.0, aic_reg = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<VertexDetail> detail;
};

struct EvalOptions {
  double r2_threshold = 0.1;
  DvWeighting dv_weighting = DvWeighting::None;
  HRFParams hrf;
  std::string raw_label = "Raw";
  std::string reg_label = "DRRM";
};

// Mean |visual_s(i) - v_T(f_i)| in degrees over vertices with R^2 at or
// above threshold and valid template interpolation. Unweighted by default.
// Throws EmptyVertexSet.
double visual_coordinate_change(const RetinotopicMap& subject,
                                const RetinotopicMap& templ,
                                std::span<const Vec2> f,
                                double r2_threshold,
                                DvWeighting weighting = DvWeighting::None);

// Full evaluation of one registration run: a raw row (identity
// correspondence) and a registered row, both aggregated over the identical
// vertex inclusion set so Raw/Reg comparisons are paired. BOLD metrics
// compare the observed series against predictions from template values
// sampled at the identity and at the registered positions.
EvalReport evaluate_run(const RetinotopicMap& subject,
                        const RetinotopicMap& templ,
                        const RegistrationResult& registration,
                        const Stimulus& stimulus,
                        const BoldSeries& observed,
                        const EvalOptions& options = {});

enum class ReportFormat { Text, Csv, Svg };

// Deterministic rendering. Text columns follow the d|v|, F_flip, RMSE,
// Correlation, AIC order; CSV round-trips losslessly through parse_report_csv.
// Throws UnknownFormat for formats this report cannot render.
std::string emit_report(const EvalReport& report, ReportFormat format);
ReportFormat parse_report_format(const std::string& name);

EvalReport parse_report_csv(const std::string& text);

std::string emit_detail_csv(const EvalReport& report);

}  // namespace retmap
