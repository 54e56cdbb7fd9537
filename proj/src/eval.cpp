#include "retmap/eval.hpp"

#include <algorithm>
#include <cmath>

#include "retmap/io.hpp"

namespace retmap {

double visual_coordinate_change(const RetinotopicMap& subject,
                                const RetinotopicMap& templ,
                                std::span<const Vec2> f,
                                double r2_threshold,
                                DvWeighting weighting) {
  check_map_invariants(subject);
  if (f.size() != static_cast<std::size_t>(subject.vertex_count()))
    throw InvalidArgument("map length does not match the subject");
  std::vector<TemplateSample> samples = interpolate_template(templ, f);
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    double r2 = subject.variance_explained[i];
    if (r2 < r2_threshold || !samples[i].valid) continue;
    double w = weighting == DvWeighting::R2 ? std::max(r2, 0.0) : 1.0;
    acc += w * (subject.visual[i] - samples[i].visual).norm();
    wsum += w;
  }
  if (wsum <= 0.0)
    throw EmptyVertexSet("no vertex passed the R^2 and interpolation filters");
  return acc / wsum;
}

EvalReport evaluate_run(const RetinotopicMap& subject,
                        const RetinotopicMap& templ,
                        const RegistrationResult& registration,
                        const Stimulus& stimulus,
                        const BoldSeries& observed,
                        const EvalOptions& options) {
  check_map_invariants(subject);
  const int nv = subject.vertex_count();
  if (registration.f.size() != static_cast<std::size_t>(nv))
    throw InvalidArgument("registration result does not match the subject");
  if (observed.samples.size() != static_cast<std::size_t>(nv))
    throw InvalidArgument("BOLD series does not match the subject");

  TemplateInterpolator interp(templ);
  std::vector<TemplateSample> raw(nv), reg(nv);
  for (int i = 0; i < nv; ++i) {
    raw[i] = interp.sample(subject.param.uv[i]);
    reg[i] = interp.sample(registration.f[i]);
  }

  EvalReport report;
  report.detail.resize(nv);
  std::vector<FitEntry> fit_raw(nv), fit_reg(nv);
  std::vector<char> included(nv, 0);

  for (int i = 0; i < nv; ++i) {
    VertexDetail& d = report.detail[i];
    d.vertex = i;
    bool candidate = subject.variance_explained[i] >= options.r2_threshold &&
                     raw[i].valid && reg[i].valid;
    if (raw[i].valid) d.dv_raw = (subject.visual[i] - raw[i].visual).norm();
    if (reg[i].valid) d.dv_reg = (subject.visual[i] - reg[i].visual).norm();
    if (!candidate) continue;

    // Predictions from the template values carried to this vertex by the
    // identity and by the registered correspondence.
    std::vector<double> pred_raw = predict_bold(stimulus, raw[i].visual.x(),
                                                raw[i].visual.y(), raw[i].prf_size,
                                                options.hrf);
    std::vector<double> pred_reg = predict_bold(stimulus, reg[i].visual.x(),
                                                reg[i].visual.y(), reg[i].prf_size,
                                                options.hrf);
    fit_raw[i] = fit_gain_and_metrics(observed.samples[i], pred_raw);
    fit_reg[i] = fit_gain_and_metrics(observed.samples[i], pred_reg);
    if (!fit_raw[i].valid || !fit_reg[i].valid) continue;

    included[i] = 1;
    d.included = true;
    d.rmse_raw = fit_raw[i].rmse;
    d.rmse_reg = fit_reg[i].rmse;
    d.pc_raw = fit_raw[i].pearson;
    d.pc_reg = fit_reg[i].pearson;
    d.aic_raw = fit_raw[i].aic;
    d.aic_reg = fit_reg[i].aic;
  }

  double dv_raw_acc = 0.0, dv_reg_acc = 0.0, wsum = 0.0;
  double rmse_raw = 0.0, rmse_reg = 0.0, pc_raw = 0.0, pc_reg = 0.0;
  double aic_raw = 0.0, aic_reg = 0.0;
  long n_included = 0;
  for (int i = 0; i < nv; ++i) {
    if (!included[i]) continue;
    double w = options.dv_weighting == DvWeighting::R2
                   ? std::max(subject.variance_explained[i], 0.0)
                   : 1.0;
    dv_raw_acc += w * report.detail[i].dv_raw;
    dv_reg_acc += w * report.detail[i].dv_reg;
    wsum += w;
    rmse_raw += report.detail[i].rmse_raw;
    rmse_reg += report.detail[i].rmse_reg;
    pc_raw += report.detail[i].pc_raw;
    pc_reg += report.detail[i].pc_reg;
    aic_raw += report.detail[i].aic_raw;
    aic_reg += report.detail[i].aic_reg;
    ++n_included;
  }
  if (n_included == 0 || wsum <= 0.0)
    throw EmptyVertexSet("no vertex passed the evaluation filters");

  double n = static_cast<double>(n_included);
  EvalRow base;
  base.rmse_raw = rmse_raw / n;
  base.rmse_reg = rmse_reg / n;
  base.pc_raw = pc_raw / n;
  base.pc_reg = pc_reg / n;
  base.aic_raw = aic_raw / n;
  base.aic_reg = aic_reg / n;

  EvalRow raw_row = base;
  raw_row.method_label = options.raw_label;
  raw_row.d_v = dv_raw_acc / wsum;
  raw_row.f_flip = count_flipped(subject.param.uv, subject.mesh.faces);

  EvalRow reg_row = base;
  reg_row.method_label = options.reg_label;
  reg_row.d_v = dv_reg_acc / wsum;
  reg_row.f_flip = count_flipped(registration.f, subject.mesh.faces);

  report.rows = {raw_row, reg_row};
  return report;
}

namespace {

constexpr const char* kReportHeader =
    "method,d_v,f_flip,rmse_raw,rmse_reg,pc_raw,pc_reg,aic_raw,aic_reg";

std::string report_csv(const EvalReport& report) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const EvalRow& r : report.rows) {
    out += r.method_label + "," + format_double(r.d_v) + "," +
           std::to_string(r.f_flip) + "," + format_double(r.rmse_raw) + "," +
           format_double(r.rmse_reg) + "," + format_double(r.pc_raw) + "," +
           format_double(r.pc_reg) + "," + format_double(r.aic_raw) + "," +
           format_double(r.aic_reg) + "\n";
  }
  return out;
}

std::string report_text(const EvalReport& report) {
  std::vector<std::array<std::string, 9>> grid;
  grid.push_back({"Method", "d|v|", "F_flip", "RMSE(raw)", "RMSE(reg)", "p_c(raw)",
                  "p_c(reg)", "AIC(raw)", "AIC(reg)"});
  for (const EvalRow& r : report.rows)
    grid.push_back({r.method_label, format_double(r.d_v), std::to_string(r.f_flip),
                    format_double(r.rmse_raw), format_double(r.rmse_reg),
                    format_double(r.pc_raw), format_double(r.pc_reg),
                    format_double(r.aic_raw), format_double(r.aic_reg)});
  std::array<std::size_t, 9> width{};
  for (const auto& row : grid)
    for (int c = 0; c < 9; ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : grid) {
    for (int c = 0; c < 9; ++c) {
      if (c) out += "  ";
      out += row[c];
      if (c + 1 < 9) out.append(width[c] - row[c].size(), ' ');
    }
    out += "\n";
  }
  return out;
}

std::string report_svg(const EvalReport& report) {
  const int row_h = 28, col_w = 110, ncol = 9;
  int nrow = static_cast<int>(report.rows.size()) + 1;
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(ncol * col_w + 20) + "\" height=\"" +
                    std::to_string(nrow * row_h + 20) + "\">\n";
  auto cell = [&](int r, int c, const std::string& text, bool bold) {
    out += "  <text x=\"" + std::to_string(10 + c * col_w) + "\" y=\"" +
           std::to_string(10 + (r + 1) * row_h - 9) + "\" font-family=\"monospace\"" +
           (bold ? " font-weight=\"bold\"" : "") + ">" + text + "</text>\n";
  };
  const std::array<std::string, 9> head = {"Method", "d|v|", "F_flip", "RMSE(raw)",
                                           "RMSE(reg)", "p_c(raw)", "p_c(reg)",
                                           "AIC(raw)", "AIC(reg)"};
  for (int c = 0; c < ncol; ++c) cell(0, c, head[c], true);
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const EvalRow& row = report.rows[r];
    int rr = static_cast<int>(r) + 1;
    cell(rr, 0, row.method_label, false);
    cell(rr, 1, format_double(row.d_v), false);
    cell(rr, 2, std::to_string(row.f_flip), false);
    cell(rr, 3, format_double(row.rmse_raw), false);
    cell(rr, 4, format_double(row.rmse_reg), false);
    cell(rr, 5, format_double(row.pc_raw), false);
    cell(rr, 6, format_double(row.pc_reg), false);
    cell(rr, 7, format_double(row.aic_raw), false);
    cell(rr, 8, format_double(row.aic_reg), false);
  }
  out += "</svg>\n";
  return out;
}

}  // namespace

std::string emit_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Text:
      return report_text(report);
    case ReportFormat::Csv:
      return report_csv(report);
    case ReportFormat::Svg:
      return report_svg(report);
  }
  throw UnknownFormat("unsupported report format");
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text") return ReportFormat::Text;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "svg") return ReportFormat::Svg;
  throw UnknownFormat("unknown report format: " + name);
}

EvalReport parse_report_csv(const std::string& text) {
  EvalReport report;
  bool header_seen = false;
  std::size_t start = 0;
  int lineno = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string context = "report csv:" + std::to_string(lineno);
    if (!header_seen) {
      if (line != kReportHeader)
        throw ParseError(context + ": unexpected report header");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 9) throw ParseError(context + ": expected 9 fields");
    EvalRow r;
    r.method_label = fields[0];
    r.d_v = parse_double(fields[1], context);
    r.f_flip = static_cast<long>(parse_double(fields[2], context));
    r.rmse_raw = parse_double(fields[3], context);
    r.rmse_reg = parse_double(fields[4], context);
    r.pc_raw = parse_double(fields[5], context);
    r.pc_reg = parse_double(fields[6], context);
    r.aic_raw = parse_double(fields[7], context);
    r.aic_reg = parse_double(fields[8], context);
    report.rows.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("report csv: missing header");
  return report;
}

std::string emit_detail_csv(const EvalReport& report) {
  std::string out =
      "vertex,included,dv_raw,dv_reg,rmse_raw,rmse_reg,pc_raw,pc_reg,aic_raw,aic_reg\n";
  for (const VertexDetail& d : report.detail) {
    out += std::to_string(d.vertex) + "," + (d.included ? "1" : "0") + "," +
           format_double(d.dv_raw) + "," + format_double(d.dv_reg) + "," +
           format_double(d.rmse_raw) + "," + format_double(d.rmse_reg) + "," +
           format_double(d.pc_raw) + "," + format_double(d.pc_reg) + "," +
           format_double(d.aic_raw) + "," + format_double(d.aic_reg) + "\n";
  }
  return out;
}

}  // namespace retmap
